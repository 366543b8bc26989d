//! Run configuration for `train`: command-line flags override the TOML file,
//! which overrides built-in defaults. The resolved configuration is written
//! back as `config.toml` in the run directory and can be fed to `--config`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use twostream::data::SplitScheme;
use twostream::{ConvPooling, Hyperparams, ModelConfig, OptimizerKind, Variant};

use crate::failure::Failure;
use crate::TrainArgs;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    manifest: Option<PathBuf>,
    out: Option<PathBuf>,
    scheme: Option<String>,
    fold: Option<String>,
    seed: Option<u64>,
    epoch_checkpoints: Option<bool>,
    #[serde(default)]
    model: FileModel,
    #[serde(default)]
    train: FileTrain,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileModel {
    variant: Option<String>,
    hidden: Option<usize>,
    merge: Option<usize>,
    dropout: Option<f64>,
    pooling: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileTrain {
    learning_rate: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    epsilon: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    clip_norm: Option<f64>,
    optimizer: Option<String>,
}

/// Fully resolved settings. The output directory is deliberately not part
/// of the echo so that runs into different directories stay comparable.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub scheme: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fold: Option<String>,
    pub seed: u64,
    pub epoch_checkpoints: bool,
    pub model: ModelSection,
    pub train: TrainSection,
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSection {
    pub variant: String,
    pub hidden: usize,
    pub merge: usize,
    pub dropout: f64,
    pub pooling: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    pub optimizer: String,
}

fn parse<T: std::str::FromStr<Err = twostream::Error>>(v: &str) -> Result<T, Failure> {
    v.parse::<T>().map_err(Failure::from)
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, Failure> {
    match s {
        "adam" => Ok(OptimizerKind::Adam),
        "sgd" => Ok(OptimizerKind::Sgd),
        _ => Err(Failure::Config(format!(
            "unknown optimizer {s:?} (expected adam or sgd)"
        ))),
    }
}

fn optimizer_name(k: OptimizerKind) -> &'static str {
    match k {
        OptimizerKind::Adam => "adam",
        OptimizerKind::Sgd => "sgd",
    }
}

fn pooling_name(p: ConvPooling) -> &'static str {
    match p {
        ConvPooling::Flatten => "flatten",
        ConvPooling::SpatialAverage => "spatial_average",
    }
}

fn read_file(path: &Path) -> Result<FileConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read config file {}: {e}", path.display())))?;
    let mut file: FileConfig =
        toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    // Relative paths in a config file are relative to the file itself.
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [&mut file.manifest, &mut file.out].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(file)
}

impl RunConfig {
    pub fn resolve(args: &TrainArgs) -> Result<Self, Failure> {
        let file = match &args.config {
            Some(p) => read_file(p)?,
            None => FileConfig::default(),
        };
        let d = Hyperparams::default();

        let manifest = args.manifest.clone().or(file.manifest).ok_or_else(|| {
            Failure::Config("no manifest given (use --manifest or set manifest in the config file)".into())
        })?;
        // Absolute, so the echoed config works from inside the run directory.
        let manifest = std::fs::canonicalize(&manifest).unwrap_or(manifest);
        let variant = match (args.variant, &file.model.variant) {
            (Some(v), _) => v,
            (None, Some(s)) => parse::<Variant>(s)?,
            (None, None) => Variant::Fu2,
        };
        let scheme = match (args.scheme, &file.scheme) {
            (Some(s), _) => s,
            (None, Some(s)) => parse::<SplitScheme>(s)?,
            (None, None) => SplitScheme::LoocvVideo,
        };
        let pooling = match (args.pooling, &file.model.pooling) {
            (Some(p), _) => p,
            (None, Some(s)) => parse::<ConvPooling>(s)?,
            (None, None) => ConvPooling::default(),
        };
        let optimizer = match args.optimizer.as_deref().or(file.train.optimizer.as_deref()) {
            Some(s) => parse_optimizer(s)?,
            None => d.optimizer,
        };
        let defaults = ModelConfig::new(variant, 1, 1, 2);

        let cfg = RunConfig {
            manifest,
            scheme: scheme.to_string(),
            fold: args.fold.clone().or(file.fold),
            seed: args.seed.or(file.seed).unwrap_or(0),
            epoch_checkpoints: args.epoch_checkpoints || file.epoch_checkpoints.unwrap_or(false),
            model: ModelSection {
                variant: variant.to_string(),
                hidden: args.hidden.or(file.model.hidden).unwrap_or(defaults.hidden_dim),
                merge: args.merge.or(file.model.merge).unwrap_or(defaults.merge_dim),
                dropout: args.dropout.or(file.model.dropout).unwrap_or(defaults.dropout_rate),
                pooling: pooling_name(pooling).into(),
            },
            train: TrainSection {
                learning_rate: args
                    .learning_rate
                    .or(file.train.learning_rate)
                    .unwrap_or(d.learning_rate),
                beta1: file.train.beta1.unwrap_or(d.beta1),
                beta2: file.train.beta2.unwrap_or(d.beta2),
                epsilon: file.train.epsilon.unwrap_or(d.epsilon),
                batch_size: args.batch_size.or(file.train.batch_size).unwrap_or(d.batch_size),
                epochs: args.epochs.or(file.train.epochs).unwrap_or(d.epochs),
                clip_norm: args.clip_norm.or(file.train.clip_norm),
                optimizer: optimizer_name(optimizer).into(),
            },
            out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("runs")),
        };
        cfg.hyperparams().validate()?;
        if !(0.0..1.0).contains(&cfg.model.dropout) {
            return Err(Failure::Config(format!(
                "dropout must be in [0, 1), got {}",
                cfg.model.dropout
            )));
        }
        if cfg.model.hidden == 0 || cfg.model.merge == 0 {
            return Err(Failure::Config("hidden and merge sizes must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn variant(&self) -> Variant {
        self.model.variant.parse().expect("resolved variant")
    }

    pub fn scheme(&self) -> SplitScheme {
        self.scheme.parse().expect("resolved scheme")
    }

    pub fn pooling(&self) -> ConvPooling {
        self.model.pooling.parse().expect("resolved pooling")
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            learning_rate: self.train.learning_rate,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            epsilon: self.train.epsilon,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            clip_norm: self.train.clip_norm,
            optimizer: parse_optimizer(&self.train.optimizer).expect("resolved optimizer"),
            seed: self.seed,
        }
    }

    pub fn model_config(&self, conv_dim: usize, fc_dim: usize, classes: usize) -> ModelConfig {
        let mut c = ModelConfig::new(self.variant(), conv_dim, fc_dim, classes)
            .with_hidden(self.model.hidden)
            .with_merge(self.model.merge)
            .with_dropout(self.model.dropout);
        c.conv_pooling = self.pooling();
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
