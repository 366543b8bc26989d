use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;
use twostream::data::feature_file::{self, ConvLayout, FeatureFile};
use twostream::data::{load_manifest, make_splits, synth_dataset, write_feature_file, Dataset, Fold, SynthSpec};
use twostream::fsio::{read_all, write_atomic};
use twostream::gradcheck::{grad_check_with, DeskDims};
use twostream::rng::Stream;
use twostream::train::{train as fit, EpochRecord, TrainOptions};
use twostream::{
    aggregate_cv, checkpoint, evaluate, ConfusionMatrix, FusionModel, Metrics, Rng, Sample, ShortVideo, Variant,
};

use crate::config::RunConfig;
use crate::failure::Failure;
use crate::{EvalArgs, GradcheckArgs, SynthArgs, TrainArgs};

fn io_failure(what: &str, path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{what} {}: {e}", path.display()))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| io_failure("cannot create directory", path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    Ok(write_atomic(path, text.as_bytes())?)
}

pub fn sample(frames: usize, target: usize, pad_repeat: bool) -> Result<(), Failure> {
    let short = if pad_repeat {
        ShortVideo::PadRepeat
    } else {
        ShortVideo::Strict
    };
    let idx = twostream::select_frame_indices(frames, target, short)?;
    let line: Vec<String> = idx.iter().map(usize::to_string).collect();
    println!("{}", line.join(" "));
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<(), Failure> {
    let mut spec = SynthSpec::new(a.classes, a.per_class, a.frames, a.conv_dim, a.fc_dim, a.coupling);
    spec.groups = a.groups;
    spec.splits = a.splits;
    spec.noise_std = a.noise;
    let data = synth_dataset(&spec, &mut Rng::derived(a.seed, Stream::Synth, 0, 0))?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("synth"));
    create_dir(&out)?;
    let layout = ConvLayout::Pooled { dim: a.conv_dim };
    for s in &data.samples {
        let file = FeatureFile::from_sample(s, layout)?;
        write_feature_file(&out.join(format!("{}.tsff", s.video_id)), &file)?;
    }
    write_text(&out.join("manifest.tsv"), &data.manifest(&out).to_manifest_string())?;
    println!(
        "wrote {} videos in {} classes to {}",
        data.samples.len(),
        a.classes,
        out.join("manifest.tsv").display()
    );
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), Failure> {
    let variants = a.variant.map_or_else(|| Variant::ALL.to_vec(), |v| vec![v]);
    let mut over = Vec::new();
    for v in variants {
        let r = grad_check_with(v, DeskDims::default(), a.seed, a.step, a.precision, |_| {})?;
        println!(
            "{:<6} seed {} params {:>4}  max_rel {:.3e}  mean_rel {:.3e}  worst {}",
            r.variant, r.seed, r.parameters, r.max_relative_error, r.mean_relative_error, r.worst
        );
        if r.max_relative_error.is_nan() || r.max_relative_error >= a.tolerance {
            over.push(format!("{} ({:.3e})", r.variant, r.max_relative_error));
        }
    }
    if over.is_empty() {
        Ok(())
    } else {
        Err(Failure::CheckFailed(format!(
            "gradient check above tolerance {:e}: {}",
            a.tolerance,
            over.join(", ")
        )))
    }
}

/// Exclusive ownership of a run directory for the lifetime of the value.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self, Failure> {
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Failure::Runtime(format!(
                "run directory {} is in use by another process (remove {} if that process is gone)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(io_failure("cannot create lock file", &path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn find_fold<'a>(folds: &'a [Fold], name: &str) -> Result<(usize, &'a Fold), Failure> {
    folds.iter().enumerate().find(|(_, f)| f.name == name).ok_or_else(|| {
        let names: Vec<&str> = folds.iter().take(10).map(|f| f.name.as_str()).collect();
        let more = if folds.len() > 10 { ", ..." } else { "" };
        Failure::Config(format!("no fold named {name:?}; available: {}{more}", names.join(", ")))
    })
}

fn pick(samples: &[Sample], index: &HashMap<&str, usize>, ids: &[String]) -> Vec<Sample> {
    ids.iter().map(|id| samples[index[id.as_str()]].clone()).collect()
}

fn metrics_json(m: &Metrics) -> serde_json::Value {
    json!({
        "accuracy": m.accuracy,
        "macro_accuracy": m.macro_accuracy(),
        "per_class": m.per_class,
        "samples": m.samples,
    })
}

fn write_confusion(dir: &Path, cm: &ConfusionMatrix) -> Result<(), Failure> {
    write_text(&dir.join("confusion.csv"), &cm.to_csv())?;
    write_text(&dir.join("confusion_normalized.csv"), &cm.to_normalized_csv())?;
    write_text(&dir.join("heatmap.dat"), &cm.to_heatmap())
}

fn frame_dims(dataset: &Dataset, samples: &[Sample]) -> Result<(usize, usize), Failure> {
    let first = samples
        .first()
        .ok_or_else(|| Failure::Data(format!("manifest {} lists no videos", dataset.root.display())))?;
    Ok((first.conv[0].len(), first.fc[0].len()))
}

pub fn train(args: &TrainArgs) -> Result<(), Failure> {
    let cfg = RunConfig::resolve(args)?;
    let dataset = load_manifest(&cfg.manifest)?;
    let plan = make_splits(&dataset, cfg.scheme())?;
    let folds: Vec<(usize, &Fold)> = match &cfg.fold {
        Some(name) => vec![find_fold(&plan.folds, name)?],
        None => plan.folds.iter().enumerate().collect(),
    };
    let samples = dataset.load_samples(cfg.pooling())?;
    let (conv_dim, fc_dim) = frame_dims(&dataset, &samples)?;
    let model_cfg = cfg.model_config(conv_dim, fc_dim, dataset.num_classes());
    model_cfg.validate()?;
    let hp = cfg.hyperparams();
    let index: HashMap<&str, usize> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.video_id.as_str(), i))
        .collect();

    create_dir(&cfg.out)?;
    let _lock = RunLock::acquire(&cfg.out)?;
    write_text(&cfg.out.join("config.toml"), &cfg.to_toml())?;

    let mut log = String::new();
    let mut metrics = String::new();
    let mut matrices = Vec::with_capacity(folds.len());
    for (n, &(i, fold)) in folds.iter().enumerate() {
        let train_set = pick(&samples, &index, &fold.train);
        let test_set = pick(&samples, &index, &fold.test);
        let fold_dir = cfg.out.join("folds").join(format!("fold_{i:03}"));
        create_dir(&fold_dir)?;

        let mut model = FusionModel::from_seed(model_cfg.clone(), cfg.seed)?;
        let mut records: Vec<EpochRecord> = Vec::new();
        let mut on_epoch = |r: &EpochRecord| records.push(r.clone());
        fit(
            &mut model,
            &train_set,
            &hp,
            TrainOptions {
                checkpoint_dir: cfg.epoch_checkpoints.then(|| fold_dir.join("epochs")),
                on_epoch: Some(&mut on_epoch),
                ..TrainOptions::default()
            },
        )?;
        checkpoint::save(&model, &fold_dir.join("model.fsm"))?;
        let (m, cm) = evaluate(&model, &test_set, &dataset.classes)?;

        for r in &records {
            let line = json!({
                "fold": fold.name,
                "fold_index": i,
                "epoch": r.epoch,
                "train_loss": r.train_loss,
                "train_accuracy": r.train_accuracy,
            });
            log.push_str(&format!("{line}\n"));
        }
        let mut line = metrics_json(&m);
        line["fold"] = json!(fold.name);
        line["fold_index"] = json!(i);
        line["train_videos"] = json!(train_set.len());
        metrics.push_str(&format!("{line}\n"));
        eprintln!(
            "fold {}/{} ({}): accuracy {:.4}",
            n + 1,
            folds.len(),
            fold.name,
            m.accuracy
        );
        matrices.push(cm);
    }

    let summary = aggregate_cv(&matrices)?;
    let mut line = metrics_json(&summary.metrics);
    line["fold"] = json!("pooled");
    line["folds"] = json!(matrices.len());
    line["fold_accuracies"] = json!(summary.fold_accuracies);
    metrics.push_str(&format!("{line}\n"));

    write_text(&cfg.out.join("train_log.jsonl"), &log)?;
    write_text(&cfg.out.join("metrics.jsonl"), &metrics)?;
    write_confusion(&cfg.out, &summary.pooled)?;
    println!(
        "pooled accuracy {:.4} over {} videos in {} folds; results in {}",
        summary.pooled_accuracy,
        summary.metrics.samples,
        matrices.len(),
        cfg.out.display()
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<(), Failure> {
    let model = checkpoint::load(&a.checkpoint)?;
    let dataset = load_manifest(&a.manifest)?;
    if dataset.num_classes() != model.config().num_classes {
        return Err(Failure::Data(format!(
            "checkpoint has {} classes but {} lists {}",
            model.config().num_classes,
            a.manifest.display(),
            dataset.num_classes()
        )));
    }
    let samples = dataset.load_samples(model.config().conv_pooling)?;
    let test = match (a.scheme, &a.fold) {
        (Some(scheme), Some(name)) => {
            let plan = make_splits(&dataset, scheme)?;
            let (_, fold) = find_fold(&plan.folds, name)?;
            let index: HashMap<&str, usize> = samples
                .iter()
                .enumerate()
                .map(|(i, s)| (s.video_id.as_str(), i))
                .collect();
            pick(&samples, &index, &fold.test)
        }
        _ => samples,
    };
    let (m, cm) = evaluate(&model, &test, &dataset.classes)?;
    println!("{}", metrics_json(&m));
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_text(&out.join("metrics.jsonl"), &format!("{}\n", metrics_json(&m)))?;
        write_confusion(out, &cm)?;
    }
    Ok(())
}

pub fn inspect(path: &Path) -> Result<(), Failure> {
    let bytes = read_all(path)?;
    if bytes.starts_with(checkpoint::MAGIC) {
        let model = checkpoint::decode(&bytes, path)?;
        let c = model.config();
        println!("path: {}", path.display());
        println!("kind: checkpoint");
        println!("variant: {}", c.variant);
        println!("conv_dim: {}", c.conv_dim);
        println!("fc_dim: {}", c.fc_dim);
        println!("hidden_dim: {}", c.hidden_dim);
        println!("merge_dim: {}", c.merge_dim);
        println!("num_classes: {}", c.num_classes);
        println!("dropout_rate: {}", c.dropout_rate);
        println!("parameters: {}", model.parameter_count());
        return Ok(());
    }
    let file = FeatureFile::decode(&bytes, path)?;
    println!("path: {}", path.display());
    println!("kind: feature file");
    println!(
        "format: {} v{}",
        String::from_utf8_lossy(feature_file::MAGIC),
        feature_file::VERSION
    );
    println!("video_id: {}", file.video_id);
    println!("label: {}", file.label);
    println!("frames: {}", file.frames);
    match file.conv_layout {
        ConvLayout::Spatial {
            channels,
            height,
            width,
        } => {
            println!("conv_layout: spatial {channels}x{height}x{width}")
        }
        ConvLayout::Pooled { dim } => println!("conv_layout: pooled {dim}"),
    }
    println!("fc_dim: {}", file.fc_dim);
    println!("payload_crc32: {:08x} (verified)", file.payload_crc());
    Ok(())
}
