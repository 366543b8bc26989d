use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use twostream::checkpoint;
use twostream::data::{ConvLayout, FeatureFile};
use twostream::lstm::{self, LstmParams, RunMode};
use twostream::train::batch_gradient;
use twostream::{FusionModel, Mode, ModelConfig, Rng, Sample, ShortVideo, Tensor, Variant};

fn frames(d: usize, t: usize, rng: &mut Rng) -> Vec<Tensor> {
    (0..t)
        .map(|_| Tensor::vector((0..d).map(|_| rng.normal()).collect()))
        .collect()
}

fn sample(cfg: &ModelConfig, t: usize, rng: &mut Rng) -> Sample {
    let conv = frames(cfg.conv_dim, t, rng);
    let fc = frames(cfg.fc_dim, t, rng);
    Sample::new("bench", rng.below(cfg.num_classes), conv, fc).unwrap()
}

fn lstm_passes(c: &mut Criterion) {
    let mut g = c.benchmark_group("lstm");
    g.sample_size(20);
    for (d, h) in [(64, 32), (512, 100)] {
        let mut rng = Rng::new(1);
        let p = LstmParams::init(d, h, &mut rng);
        let xs = frames(d, 20, &mut rng);
        g.bench_with_input(BenchmarkId::new("forward_t20", format!("{d}x{h}")), &xs, |b, xs| {
            b.iter(|| lstm::forward(black_box(xs), &p, RunMode::SeqToSeq).unwrap())
        });
        let (hs, cache) = lstm::forward(&xs, &p, RunMode::SeqToSeq).unwrap();
        let upstream: Vec<Tensor> = hs.iter().map(|t| Tensor::vector(vec![1.0; t.len()])).collect();
        g.bench_with_input(BenchmarkId::new("bptt_t20", format!("{d}x{h}")), &xs, |b, xs| {
            b.iter(|| lstm::bptt(black_box(xs), &p, &cache, &upstream).unwrap())
        });
    }
    g.finish();
}

fn model_passes(c: &mut Criterion) {
    let mut g = c.benchmark_group("model");
    g.sample_size(20);
    for v in Variant::ALL {
        let cfg = ModelConfig::new(v, 64, 128, 10).with_hidden(32).with_merge(32);
        let m = FusionModel::from_seed(cfg.clone(), 1).unwrap();
        let mut rng = Rng::new(2);
        let s = sample(&cfg, 16, &mut rng);
        g.bench_function(BenchmarkId::new("forward_backward", v.as_str()), |b| {
            b.iter(|| {
                let mut r = Rng::new(3);
                let (_, cache) = m.forward(black_box(&s), Mode::Train(&mut r)).unwrap();
                m.backward(&s, s.label, &cache).unwrap()
            })
        });
    }
    let cfg = ModelConfig::new(Variant::Fu2, 64, 128, 10)
        .with_hidden(32)
        .with_merge(32);
    let m = FusionModel::from_seed(cfg.clone(), 1).unwrap();
    let mut rng = Rng::new(4);
    let batch: Vec<Sample> = (0..16).map(|_| sample(&cfg, 16, &mut rng)).collect();
    let refs: Vec<&Sample> = batch.iter().collect();
    g.bench_function("batch_gradient_fu_2_b16", |b| {
        b.iter(|| batch_gradient(&m, black_box(&refs), 0, 0, 0).unwrap())
    });
    g.finish();
}

fn io_and_sampling(c: &mut Criterion) {
    let mut g = c.benchmark_group("io");
    let mut rng = Rng::new(5);
    let cfg = ModelConfig::new(Variant::Fu2, 512, 4096, 11);
    let s = sample(&cfg, 20, &mut rng);
    let file = FeatureFile::from_sample(&s, ConvLayout::Pooled { dim: 512 }).unwrap();
    let bytes = file.encode().unwrap();
    g.bench_function("feature_file_encode_t20", |b| {
        b.iter(|| black_box(&file).encode().unwrap())
    });
    g.bench_function("feature_file_decode_t20", |b| {
        b.iter(|| FeatureFile::decode(black_box(&bytes), Path::new("bench.tsff")).unwrap())
    });
    let model = FusionModel::from_seed(cfg, 1).unwrap();
    g.sample_size(20);
    g.bench_function("checkpoint_encode_fu_2", |b| {
        b.iter(|| checkpoint::encode(black_box(&model)))
    });
    g.finish();

    c.bench_function("select_frame_indices_144_22", |b| {
        b.iter(|| twostream::select_frame_indices(black_box(144), black_box(22), ShortVideo::Strict).unwrap())
    });
}

criterion_group!(benches, lstm_passes, model_passes, io_and_sampling);
criterion_main!(benches);
