//! Synthetic two-stream datasets with a known dependence of the label on
//! each stream.
//!
//! * conv stream: Gaussian noise, plus (when informative) a bump of
//!   `conv_amplitude` along a fixed random ±1 direction at one of `K` motif
//!   timesteps.
//! * fc stream: Gaussian noise, plus (when informative) `fc_amplitude` times
//!   one of `K` fixed random ±1 cue prototypes on every frame.
//!
//! With [`Coupling::Xor`] the label is `(motif + cue) mod K` with the motif
//! drawn uniformly, so each stream on its own is independent of the label.
//!
//! Values are rounded to `f32` so the in-memory dataset matches what a
//! feature file round trip produces.

use std::fmt;
use std::str::FromStr;

use crate::data::manifest::{Dataset, ManifestEntry, SplitTag};
use crate::error::{Error, Result};
use crate::model::Sample;
use crate::rng::Rng;
use crate::tensor::{argmax, dot, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    ConvOnly,
    FcOnly,
    Xor,
}

impl Coupling {
    pub fn as_str(self) -> &'static str {
        match self {
            Coupling::ConvOnly => "conv_only",
            Coupling::FcOnly => "fc_only",
            Coupling::Xor => "xor",
        }
    }
}

impl fmt::Display for Coupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Coupling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv_only" => Ok(Coupling::ConvOnly),
            "fc_only" => Ok(Coupling::FcOnly),
            "xor" => Ok(Coupling::Xor),
            _ => Err(Error::Config(format!(
                "unknown coupling {s:?} (expected conv_only, fc_only or xor)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub frames: usize,
    pub conv_dim: usize,
    pub fc_dim: usize,
    pub coupling: Coupling,
    pub noise_std: f64,
    pub conv_amplitude: f64,
    pub fc_amplitude: f64,
    /// Group ids assigned round-robin (for group-level LOOCV).
    pub groups: usize,
    /// Bare split tags assigned round-robin (for predefined splits).
    pub splits: usize,
}

impl SynthSpec {
    pub fn new(
        classes: usize,
        per_class: usize,
        frames: usize,
        conv_dim: usize,
        fc_dim: usize,
        coupling: Coupling,
    ) -> Self {
        Self {
            classes,
            per_class,
            frames,
            conv_dim,
            fc_dim,
            coupling,
            noise_std: 0.5,
            conv_amplitude: 1.5,
            fc_amplitude: 1.0,
            groups: 5,
            splits: 3,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic dataset: {m}")));
        if self.classes < 2 {
            return bad("need at least 2 classes");
        }
        if self.per_class == 0 {
            return bad("need at least 1 sample per class");
        }
        if self.frames < self.classes {
            return bad("need at least as many frames as classes to place distinct motifs");
        }
        if self.conv_dim == 0 || self.fc_dim == 0 {
            return bad("feature dimensions must be positive");
        }
        if self.groups == 0 || self.splits == 0 {
            return bad("groups and splits must be positive");
        }
        if !(self.noise_std >= 0.0 && self.conv_amplitude.is_finite() && self.fc_amplitude.is_finite()) {
            return bad("invalid noise or amplitude");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
    /// Motif index planted in each sample's conv stream (`None` if absent).
    pub motifs: Vec<Option<usize>>,
    /// Cue index planted in each sample's fc stream (`None` if absent).
    pub cues: Vec<Option<usize>>,
    pub groups: Vec<String>,
    pub split_tags: Vec<String>,
    pub motif_positions: Vec<usize>,
    pub conv_direction: Vec<f64>,
    pub fc_prototypes: Vec<Vec<f64>>,
}

fn f32_round(v: f64) -> f64 {
    f64::from(v as f32)
}

fn signs(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| if rng.uniform() < 0.5 { -1.0 } else { 1.0 }).collect()
}

pub fn synth_dataset(spec: &SynthSpec, rng: &mut Rng) -> Result<SynthDataset> {
    spec.validate()?;
    let k = spec.classes;
    let t_len = spec.frames;
    let motif_positions: Vec<usize> = (0..k).map(|a| (2 * a + 1) * t_len / (2 * k)).collect();
    let conv_direction = signs(spec.conv_dim, rng);
    let fc_prototypes: Vec<Vec<f64>> = (0..k).map(|_| signs(spec.fc_dim, rng)).collect();

    let n = k * spec.per_class;
    let mut out = SynthDataset {
        spec: spec.clone(),
        class_names: (0..k).map(|c| format!("c{c}")).collect(),
        samples: Vec::with_capacity(n),
        motifs: Vec::with_capacity(n),
        cues: Vec::with_capacity(n),
        groups: Vec::with_capacity(n),
        split_tags: Vec::with_capacity(n),
        motif_positions,
        conv_direction,
        fc_prototypes,
    };

    for i in 0..spec.per_class {
        for label in 0..k {
            let idx = out.samples.len();
            let (motif, cue) = match spec.coupling {
                Coupling::ConvOnly => (Some(label), None),
                Coupling::FcOnly => (None, Some(label)),
                Coupling::Xor => {
                    let a = rng.below(k);
                    (Some(a), Some((label + k - a) % k))
                }
            };
            let mut noise = |d: usize| -> Vec<f64> { (0..d).map(|_| spec.noise_std * rng.normal()).collect() };
            let conv: Vec<Tensor> = (0..t_len)
                .map(|t| {
                    let mut x = noise(spec.conv_dim);
                    if motif.is_some_and(|a| out.motif_positions[a] == t) {
                        for (v, d) in x.iter_mut().zip(&out.conv_direction) {
                            *v += spec.conv_amplitude * d;
                        }
                    }
                    Tensor::vector(x.into_iter().map(f32_round).collect())
                })
                .collect();
            let fc: Vec<Tensor> = (0..t_len)
                .map(|_| {
                    let mut x = noise(spec.fc_dim);
                    if let Some(b) = cue {
                        for (v, p) in x.iter_mut().zip(&out.fc_prototypes[b]) {
                            *v += spec.fc_amplitude * p;
                        }
                    }
                    Tensor::vector(x.into_iter().map(f32_round).collect())
                })
                .collect();
            out.samples
                .push(Sample::new(format!("{}_{idx:05}", spec.coupling), label, conv, fc)?);
            out.motifs.push(motif);
            out.cues.push(cue);
            out.groups.push(format!("g{:02}", i % spec.groups));
            out.split_tags.push(format!("split{}", i % spec.splits + 1));
        }
    }
    Ok(out)
}

impl SynthDataset {
    /// Motif index read off the conv stream: the timestep with the largest
    /// projection on the bump direction, mapped to the nearest motif slot.
    pub fn conv_stump(&self, s: &Sample) -> usize {
        let scores: Vec<f64> = s.conv.iter().map(|x| dot(x.values(), &self.conv_direction)).collect();
        let t = argmax(&scores);
        let dist: Vec<f64> = self
            .motif_positions
            .iter()
            .map(|&p| -(p as f64 - t as f64).abs())
            .collect();
        argmax(&dist)
    }

    /// Cue index read off the fc stream: the prototype best matching the
    /// frame-averaged fc vector.
    pub fn fc_stump(&self, s: &Sample) -> usize {
        let mut mean = vec![0.0; self.spec.fc_dim];
        for x in &s.fc {
            for (m, v) in mean.iter_mut().zip(x.values()) {
                *m += v;
            }
        }
        let scores: Vec<f64> = self.fc_prototypes.iter().map(|p| dot(&mean, p)).collect();
        argmax(&scores)
    }

    /// Manifest describing this dataset, with feature files named
    /// `<video_id>.tsff` beside it.
    pub fn manifest(&self, root: &std::path::Path) -> Dataset {
        let entries = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| ManifestEntry {
                video_id: s.video_id.clone(),
                class_name: self.class_names[s.label].clone(),
                class_index: s.label,
                group: Some(self.groups[i].clone()),
                split_tags: vec![SplitTag {
                    name: self.split_tags[i].clone(),
                    role: None,
                }],
                relative_path: format!("{}.tsff", s.video_id),
            })
            .collect();
        Dataset {
            classes: self.class_names.clone(),
            entries,
            root: root.to_path_buf(),
        }
    }
}
