use std::fs;
use std::path::Path;

use twostream::data::{
    load_manifest, make_splits, read_feature_file, synth_dataset, write_feature_file, ConvLayout, Coupling,
    FeatureFile, SplitScheme, SynthSpec,
};
use twostream::{ConvPooling, Error, Rng, Sample, Tensor};

fn spatial_sample(id: &str, label: usize, frames: usize, rng: &mut Rng) -> Sample {
    let conv = (0..frames)
        .map(|_| Tensor::vector((0..2 * 3 * 2).map(|_| f64::from(rng.normal() as f32)).collect()))
        .collect();
    let fc = (0..frames)
        .map(|_| Tensor::vector((0..5).map(|_| f64::from(rng.normal() as f32)).collect()))
        .collect();
    Sample::new(id, label, conv, fc).unwrap()
}

const SPATIAL: ConvLayout = ConvLayout::Spatial {
    channels: 2,
    height: 3,
    width: 2,
};

#[test]
fn spatial_file_round_trip_and_pooling() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(1);
    let s = spatial_sample("clip", 1, 4, &mut rng);
    let f = FeatureFile::from_sample(&s, SPATIAL).unwrap();
    let path = dir.path().join("clip.tsff");
    write_feature_file(&path, &f).unwrap();
    let back = read_feature_file(&path).unwrap();
    assert_eq!(back, f);
    assert_eq!(back.to_sample(ConvPooling::Flatten).unwrap(), s);

    let pooled = back.to_sample(ConvPooling::SpatialAverage).unwrap();
    assert_eq!(pooled.len(), 4);
    for (t, frame) in pooled.conv.iter().enumerate() {
        assert_eq!(frame.len(), 2);
        for c in 0..2 {
            let block = &s.conv[t].values()[c * 6..(c + 1) * 6];
            let mean = block.iter().sum::<f64>() / 6.0;
            assert!((frame.values()[c] - mean).abs() < 1e-12);
        }
    }
    assert_eq!(pooled.fc, s.fc);
}

fn write_one(dir: &Path, name: &str) -> std::path::PathBuf {
    let mut rng = Rng::new(2);
    let s = spatial_sample(name, 0, 3, &mut rng);
    let path = dir.join(format!("{name}.tsff"));
    write_feature_file(&path, &FeatureFile::from_sample(&s, SPATIAL).unwrap()).unwrap();
    path
}

#[test]
fn damaged_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_one(dir.path(), "v");
    let good = fs::read(&path).unwrap();

    let mut magic = good.clone();
    magic[..4].copy_from_slice(b"XXXX");
    fs::write(&path, &magic).unwrap();
    let err = read_feature_file(&path).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err:?}");
    assert!(err.to_string().contains("XXXX"), "{err}");

    fs::write(&path, &good[..good.len() - 1]).unwrap();
    assert!(matches!(
        read_feature_file(&path).unwrap_err(),
        Error::Corruption { .. }
    ));

    let mut flipped = good.clone();
    let mid = good.len() - 20;
    flipped[mid] ^= 0x10;
    fs::write(&path, &flipped).unwrap();
    let err = read_feature_file(&path).unwrap_err();
    assert!(matches!(err, Error::Corruption { .. }));
    assert!(err.to_string().contains("checksum"), "{err}");
}

#[test]
fn empty_sequence_rejected_at_write() {
    let f = FeatureFile {
        video_id: "empty".into(),
        label: 0,
        conv_layout: ConvLayout::Pooled { dim: 3 },
        fc_dim: 2,
        frames: 0,
        conv: vec![],
        fc: vec![],
    };
    let dir = tempfile::tempdir().unwrap();
    assert!(write_feature_file(&dir.path().join("e.tsff"), &f).is_err());
    assert!(!dir.path().join("e.tsff").exists());
}

fn write_manifest(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("manifest.tsv");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn manifest_against_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(3);
    for (id, label) in [("a", 0), ("b", 1), ("c", 0)] {
        let s = spatial_sample(id, label, 3, &mut rng);
        write_feature_file(
            &dir.path().join(format!("{id}.tsff")),
            &FeatureFile::from_sample(&s, SPATIAL).unwrap(),
        )
        .unwrap();
    }
    let m = write_manifest(
        dir.path(),
        "a\trun\t-\t-\ta.tsff\nb\tjump\t-\t-\tb.tsff\nc\trun\t-\t-\tc.tsff\n",
    );
    let ds = load_manifest(&m).unwrap();
    assert_eq!((ds.len(), ds.num_classes()), (3, 2));
    let samples = ds.load_samples(ConvPooling::SpatialAverage).unwrap();
    assert_eq!(samples.iter().map(|s| s.label).collect::<Vec<_>>(), vec![0, 1, 0]);
    assert_eq!(samples[1].video_id, "b");

    // c's file says label 0 but the manifest now says jump (1).
    let m = write_manifest(
        dir.path(),
        "a\trun\t-\t-\ta.tsff\nb\tjump\t-\t-\tb.tsff\nc\tjump\t-\t-\tc.tsff\n",
    );
    let err = load_manifest(&m)
        .unwrap()
        .load_samples(ConvPooling::Flatten)
        .unwrap_err();
    assert!(
        matches!(&err, Error::Sample { video_id, .. } if video_id == "c"),
        "{err}"
    );

    let m = write_manifest(
        dir.path(),
        "a\trun\t-\t-\ta.tsff\nx\trun\t-\t-\tx.tsff\ny\tjump\t-\t-\ty.tsff\n",
    );
    match load_manifest(&m).unwrap_err() {
        Error::MissingFiles(list) => {
            assert_eq!(list.len(), 2);
            assert!(list[0].contains('x') && list[1].contains('y'));
        }
        e => panic!("{e:?}"),
    }

    let m = write_manifest(dir.path(), "a\trun\t-\t-\ta.tsff\na\tjump\t-\t-\tb.tsff\n");
    assert!(matches!(load_manifest(&m).unwrap_err(), Error::DuplicateId(id) if id == "a"));

    let m = write_manifest(dir.path(), "@classes\trun\tjump\na\twalk\t-\t-\ta.tsff\n");
    assert!(matches!(
        load_manifest(&m).unwrap_err(),
        Error::Manifest { line: 2, .. }
    ));
}

#[test]
fn synthetic_dataset_survives_disk() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec::new(3, 4, 6, 5, 7, Coupling::Xor);
    let synth = synth_dataset(&spec, &mut Rng::new(5)).unwrap();
    for s in &synth.samples {
        let f = FeatureFile::from_sample(s, ConvLayout::Pooled { dim: 5 }).unwrap();
        write_feature_file(&dir.path().join(format!("{}.tsff", s.video_id)), &f).unwrap();
    }
    let text = synth.manifest(dir.path()).to_manifest_string();
    let m = write_manifest(dir.path(), &text);
    let ds = load_manifest(&m).unwrap();
    assert_eq!(ds.classes, synth.class_names);
    assert_eq!(ds.load_samples(ConvPooling::SpatialAverage).unwrap(), synth.samples);

    let groups = make_splits(&ds, SplitScheme::LoocvGroup).unwrap();
    let distinct: std::collections::BTreeSet<_> = synth.groups.iter().collect();
    assert_eq!(groups.folds.len(), distinct.len());
    for f in &groups.folds {
        let held: std::collections::BTreeSet<_> = f
            .test
            .iter()
            .map(|id| &synth.groups[ds.index_of(id).unwrap()])
            .collect();
        assert_eq!(held.len(), 1);
        assert!(f
            .train
            .iter()
            .all(|id| !held.contains(&synth.groups[ds.index_of(id).unwrap()])));
    }
    let predefined = make_splits(&ds, SplitScheme::Predefined).unwrap();
    assert_eq!(predefined.folds.len(), 3);
    for f in &predefined.folds {
        assert_eq!(f.train.len() + f.test.len(), 12);
    }
}

#[test]
fn scheme_errors_name_the_video() {
    let dir = tempfile::tempdir().unwrap();
    write_one(dir.path(), "v");
    let m = write_manifest(dir.path(), "v\ta\t-\t-\tv.tsff\n");
    let ds = load_manifest(&m).unwrap();
    for scheme in [SplitScheme::LoocvGroup, SplitScheme::Predefined] {
        let err = make_splits(&ds, scheme).unwrap_err();
        assert!(matches!(err, Error::Scheme { .. }));
        assert!(err.to_string().contains('v'));
    }
}
