//! The four CNN-feature to LSTM architectures.
//!
//! * `conv_l`: seq-to-one LSTM over the conv stream, affine head, softmax.
//! * `fc_l`: the same over the fc stream.
//! * `fu_1`: both seq-to-one LSTMs, `softmax(W [h_conv, h_fc] + b)`.
//! * `fu_2`: both streams through seq-to-seq LSTMs, a per-timestep merge
//!   `m_t = W [h_conv_t, h_fc_t] + b`, a seq-to-one LSTM over `m_1..m_T`,
//!   then head and softmax. Gradients flow from the merge into both streams.
//!
//! Inverted dropout sits in front of every head, and on each `m_t` in `fu_2`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{self, LstmCache, LstmParams, RunMode};
use crate::rng::{seeded_init, Init, Rng, Stream};
use crate::tensor::{add_matvec_t, add_outer, affine, argmax, softmax, softmax_cross_entropy_grad, Tensor};

pub const DEFAULT_HIDDEN: usize = 100;
pub const DEFAULT_MERGE: usize = 100;
pub const DEFAULT_DROPOUT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ConvL,
    FcL,
    #[serde(rename = "fu_1")]
    Fu1,
    #[serde(rename = "fu_2")]
    Fu2,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::ConvL, Variant::FcL, Variant::Fu1, Variant::Fu2];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::ConvL => "conv_l",
            Variant::FcL => "fc_l",
            Variant::Fu1 => "fu_1",
            Variant::Fu2 => "fu_2",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    pub fn uses_conv(self) -> bool {
        self != Variant::FcL
    }

    pub fn uses_fc(self) -> bool {
        self != Variant::ConvL
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "conv_l" => Ok(Variant::ConvL),
            "fc_l" => Ok(Variant::FcL),
            "fu_1" | "fu1" => Ok(Variant::Fu1),
            "fu_2" | "fu2" => Ok(Variant::Fu2),
            _ => Err(Error::Config(format!(
                "unknown variant {s:?} (expected conv_l, fc_l, fu_1 or fu_2)"
            ))),
        }
    }
}

/// How a spatial conv map `C×Hs×Ws` is turned into a per-frame vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvPooling {
    /// Keep all `C·Hs·Ws` values.
    Flatten,
    /// Average each channel over its spatial positions, giving `C` values.
    #[default]
    SpatialAverage,
}

impl ConvPooling {
    pub fn as_str(self) -> &'static str {
        match self {
            ConvPooling::Flatten => "flatten",
            ConvPooling::SpatialAverage => "spatial_average",
        }
    }
}

impl FromStr for ConvPooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flatten" => Ok(ConvPooling::Flatten),
            "spatial_average" | "average" | "avg" => Ok(ConvPooling::SpatialAverage),
            _ => Err(Error::Config(format!(
                "unknown conv pooling {s:?} (expected flatten or spatial_average)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Per-frame conv feature size after pooling.
    pub conv_dim: usize,
    pub fc_dim: usize,
    pub hidden_dim: usize,
    /// Output size of the per-timestep merge in `fu_2`.
    pub merge_dim: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub conv_pooling: ConvPooling,
}

impl ModelConfig {
    pub fn new(variant: Variant, conv_dim: usize, fc_dim: usize, num_classes: usize) -> Self {
        Self {
            variant,
            conv_dim,
            fc_dim,
            hidden_dim: DEFAULT_HIDDEN,
            merge_dim: DEFAULT_MERGE,
            num_classes,
            dropout_rate: DEFAULT_DROPOUT,
            conv_pooling: ConvPooling::default(),
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden_dim = hidden;
        self
    }

    pub fn with_merge(mut self, merge: usize) -> Self {
        self.merge_dim = merge;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hidden_dim < 1 {
            return bad("hidden_dim must be at least 1".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if self.variant.uses_conv() && self.conv_dim == 0 {
            return bad(format!("{} needs conv_dim >= 1", self.variant));
        }
        if self.variant.uses_fc() && self.fc_dim == 0 {
            return bad(format!("{} needs fc_dim >= 1", self.variant));
        }
        if self.variant == Variant::Fu2 && self.merge_dim == 0 {
            return bad("fu_2 needs merge_dim >= 1".into());
        }
        Ok(())
    }

    fn head_in(&self) -> usize {
        match self.variant {
            Variant::Fu1 => 2 * self.hidden_dim,
            _ => self.hidden_dim,
        }
    }

    /// Trainable parameter count derived from the dimensions alone.
    pub fn closed_form_count(&self) -> usize {
        let h = self.hidden_dim;
        let k = self.num_classes;
        let lstm = LstmParams::closed_form_count;
        let head = k * self.head_in() + k;
        match self.variant {
            Variant::ConvL => lstm(self.conv_dim, h) + head,
            Variant::FcL => lstm(self.fc_dim, h) + head,
            Variant::Fu1 => lstm(self.conv_dim, h) + lstm(self.fc_dim, h) + head,
            Variant::Fu2 => {
                let merge = self.merge_dim * 2 * h + self.merge_dim;
                lstm(self.conv_dim, h) + lstm(self.fc_dim, h) + merge + lstm(self.merge_dim, h) + head
            }
        }
    }
}

/// Affine layer `y = W x + b`, `W` of shape `[out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn init(input: usize, output: usize, rng: &mut Rng) -> Self {
        Self {
            weight: seeded_init(&[output, input], Init::GlorotUniform, rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Tensor> {
        affine(x, &self.weight, &self.bias)
    }

    /// Accumulates parameter gradients into `grads` and returns `W^T dy`.
    fn backward(&self, grads: &mut Dense, x: &[f64], dy: &[f64]) -> Vec<f64> {
        add_outer(&mut grads.weight, dy, x);
        for (b, d) in grads.bias.values_mut().iter_mut().zip(dy) {
            *b += d;
        }
        let mut dx = vec![0.0; x.len()];
        add_matvec_t(&mut dx, &self.weight, dy);
        dx
    }
}

/// One video: per-frame conv and fc feature vectors plus its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub video_id: String,
    pub label: usize,
    pub conv: Vec<Tensor>,
    pub fc: Vec<Tensor>,
}

impl Sample {
    pub fn new(video_id: impl Into<String>, label: usize, conv: Vec<Tensor>, fc: Vec<Tensor>) -> Result<Self> {
        let video_id = video_id.into();
        if conv.is_empty() || fc.is_empty() {
            return Err(Error::EmptySequence("sample"));
        }
        if conv.len() != fc.len() {
            return Err(Error::Consistency(format!(
                "{video_id}: conv stream has {} frames, fc stream has {}",
                conv.len(),
                fc.len()
            )));
        }
        Ok(Self {
            video_id,
            label,
            conv,
            fc,
        })
    }

    pub fn len(&self) -> usize {
        self.conv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conv.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureStream {
    Conv,
    Fc,
}

/// A configured architecture and all of its trainable tensors.
///
/// Gradients are returned in the same structure (see [`Gradients`]).
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    config: ModelConfig,
    pub conv_lstm: Option<LstmParams>,
    pub fc_lstm: Option<LstmParams>,
    /// `fu_2` only: per-timestep `(2H) -> merge_dim` map.
    pub merge: Option<Dense>,
    /// `fu_2` only: seq-to-one LSTM over the merged sequence.
    pub merge_lstm: Option<LstmParams>,
    /// `H -> K`, or `(2H) -> K` for `fu_1`.
    pub head: Dense,
}

/// Gradient set mirroring a [`FusionModel`].
pub type Gradients = FusionModel;

pub enum Mode<'a> {
    Eval,
    /// Dropout masks are drawn from the given stream.
    Train(&'a mut Rng),
}

impl FusionModel {
    pub fn build(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let v = config.variant;
        let conv_lstm = v.uses_conv().then(|| LstmParams::init(config.conv_dim, h, rng));
        let fc_lstm = v.uses_fc().then(|| LstmParams::init(config.fc_dim, h, rng));
        let (merge, merge_lstm) = if v == Variant::Fu2 {
            (
                Some(Dense::init(2 * h, config.merge_dim, rng)),
                Some(LstmParams::init(config.merge_dim, h, rng)),
            )
        } else {
            (None, None)
        };
        let head = Dense::init(config.head_in(), config.num_classes, rng);
        Ok(Self {
            config,
            conv_lstm,
            fc_lstm,
            merge,
            merge_lstm,
            head,
        })
    }

    /// Builds from a seed using the dedicated initialization stream.
    pub fn from_seed(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::build(config, &mut Rng::derived(seed, Stream::Init, 0, 0))
    }

    /// Same structure, every tensor zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Trainable tensors in their fixed canonical order (also the checkpoint order).
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        fn push_lstm<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, p: &'a LstmParams) {
            for (n, t) in ["w_input", "w_hidden", "bias"].iter().zip(p.tensors()) {
                out.push((format!("{prefix}.{n}"), t));
            }
        }
        let mut out = Vec::new();
        if let Some(p) = &self.conv_lstm {
            push_lstm(&mut out, "conv_lstm", p);
        }
        if let Some(p) = &self.fc_lstm {
            push_lstm(&mut out, "fc_lstm", p);
        }
        if let Some(d) = &self.merge {
            out.push(("merge.weight".into(), &d.weight));
            out.push(("merge.bias".into(), &d.bias));
        }
        if let Some(p) = &self.merge_lstm {
            push_lstm(&mut out, "merge_lstm", p);
        }
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for p in [&mut self.conv_lstm, &mut self.fc_lstm].into_iter().flatten() {
            out.extend(p.tensors_mut());
        }
        if let Some(d) = &mut self.merge {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        if let Some(p) = &mut self.merge_lstm {
            out.extend(p.tensors_mut());
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn axpy(&mut self, alpha: f64, other: &FusionModel) -> Result<()> {
        let theirs = other.tensors();
        let mine = self.tensors_mut();
        if mine.len() != theirs.len() {
            return Err(Error::Consistency("parameter sets differ in structure".into()));
        }
        for (a, b) in mine.into_iter().zip(theirs) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    /// Weight columns of the merge matrix that read the given stream:
    /// `head` for `fu_1`, `merge` for `fu_2`.
    pub fn merge_block(&self, stream: FeatureStream) -> Option<Range<usize>> {
        let h = self.config.hidden_dim;
        match self.config.variant {
            Variant::Fu1 | Variant::Fu2 => Some(match stream {
                FeatureStream::Conv => 0..h,
                FeatureStream::Fc => h..2 * h,
            }),
            _ => None,
        }
    }

    fn merge_weight_mut(&mut self) -> Option<&mut Tensor> {
        match self.config.variant {
            Variant::Fu1 => Some(&mut self.head.weight),
            Variant::Fu2 => self.merge.as_mut().map(|d| &mut d.weight),
            _ => None,
        }
    }

    /// Zeroes the merge-weight columns belonging to `stream`.
    pub fn zero_merge_block(&mut self, stream: FeatureStream) -> Result<()> {
        let cols = self
            .merge_block(stream)
            .ok_or_else(|| Error::Config(format!("{} has no merge weights", self.variant())))?;
        let w = self.merge_weight_mut().expect("fusion variant");
        let width = w.cols();
        for r in 0..w.rows() {
            w.values_mut()[r * width + cols.start..r * width + cols.end].fill(0.0);
        }
        Ok(())
    }

    /// All-ones mask with the `stream` merge block set to zero. Multiplying
    /// gradients by it freezes that block.
    pub fn freeze_mask(&self, stream: FeatureStream) -> Result<Gradients> {
        let mut mask = self.zeros_like();
        for t in mask.tensors_mut() {
            t.fill(1.0);
        }
        mask.zero_merge_block(stream)?;
        Ok(mask)
    }

    fn check_sample(&self, s: &Sample) -> Result<()> {
        let wrap = |e: Error| Error::Sample {
            video_id: s.video_id.clone(),
            source: Box::new(e),
        };
        if s.conv.is_empty() || s.conv.len() != s.fc.len() {
            return Err(wrap(Error::Consistency(format!(
                "stream lengths {} and {}",
                s.conv.len(),
                s.fc.len()
            ))));
        }
        let cfg = &self.config;
        let streams = [
            (cfg.variant.uses_conv(), &s.conv, cfg.conv_dim, "conv frame"),
            (cfg.variant.uses_fc(), &s.fc, cfg.fc_dim, "fc frame"),
        ];
        for (used, frames, dim, op) in streams {
            if !used {
                continue;
            }
            if let Some(bad) = frames.iter().find(|t| t.len() != dim) {
                return Err(wrap(Error::dim(op, bad.shape(), &[dim])));
            }
        }
        Ok(())
    }

    pub fn forward(&self, s: &Sample, mut mode: Mode<'_>) -> Result<(Tensor, ForwardCache)> {
        self.check_sample(s)?;
        let rate = self.config.dropout_rate;
        let mut dropout = |x: &mut [f64]| -> Option<Vec<f64>> {
            match &mut mode {
                Mode::Train(rng) if rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = x
                        .iter()
                        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
                        .collect();
                    x.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                    Some(mask)
                }
                _ => None,
            }
        };

        let mut cache = ForwardCache {
            variant: self.variant(),
            seq_len: s.len(),
            conv: None,
            fc: None,
            merge_inputs: Vec::new(),
            merged_pre_dropout: Vec::new(),
            merged: Vec::new(),
            merge_masks: Vec::new(),
            merge_cache: None,
            head_input: Vec::new(),
            head_mask: None,
            probs: Tensor::zeros(&[1]),
        };

        let mut head_input = match self.variant() {
            Variant::ConvL | Variant::FcL | Variant::Fu1 => {
                let mut hin = Vec::with_capacity(self.config.head_in());
                if let Some(p) = &self.conv_lstm {
                    let (out, c) = lstm::forward(&s.conv, p, RunMode::SeqToOne)?;
                    hin.extend_from_slice(out[0].values());
                    cache.conv = Some(c);
                }
                if let Some(p) = &self.fc_lstm {
                    let (out, c) = lstm::forward(&s.fc, p, RunMode::SeqToOne)?;
                    hin.extend_from_slice(out[0].values());
                    cache.fc = Some(c);
                }
                hin
            }
            Variant::Fu2 => {
                let (hc, cc) = lstm::forward(&s.conv, self.conv_lstm.as_ref().expect("fu_2"), RunMode::SeqToSeq)?;
                let (hf, cf) = lstm::forward(&s.fc, self.fc_lstm.as_ref().expect("fu_2"), RunMode::SeqToSeq)?;
                let merge = self.merge.as_ref().expect("fu_2");
                for (a, b) in hc.iter().zip(&hf) {
                    let mut u = Vec::with_capacity(a.len() + b.len());
                    u.extend_from_slice(a.values());
                    u.extend_from_slice(b.values());
                    let m = merge.forward(&u)?;
                    let mut md = m.values().to_vec();
                    if let Some(mask) = dropout(&mut md) {
                        cache.merge_masks.push(mask);
                    }
                    cache.merge_inputs.push(u);
                    cache.merged_pre_dropout.push(m);
                    cache.merged.push(Tensor::vector(md));
                }
                let (out, mc) = lstm::forward(
                    &cache.merged,
                    self.merge_lstm.as_ref().expect("fu_2"),
                    RunMode::SeqToOne,
                )?;
                cache.conv = Some(cc);
                cache.fc = Some(cf);
                cache.merge_cache = Some(mc);
                out[0].values().to_vec()
            }
        };
        cache.head_mask = dropout(&mut head_input);
        let logits = self.head.forward(&head_input)?;
        let probs = softmax(logits.values())?;
        cache.head_input = head_input;
        cache.probs = probs.clone();
        Ok((probs, cache))
    }

    /// Exact gradient of `cross_entropy(forward(s), label)` using the dropout
    /// masks recorded in `cache`.
    pub fn backward(&self, s: &Sample, label: usize, cache: &ForwardCache) -> Result<Gradients> {
        if cache.variant != self.variant() || cache.seq_len != s.len() || cache.probs.len() != self.config.num_classes {
            return Err(Error::Consistency(format!(
                "cache from {} over {} frames does not match {} over {} frames",
                cache.variant,
                cache.seq_len,
                self.variant(),
                s.len()
            )));
        }
        let mut g = self.zeros_like();
        let dlogits = softmax_cross_entropy_grad(cache.probs.values(), label)?;
        let mut dh = self.head.backward(&mut g.head, &cache.head_input, dlogits.values());
        if let Some(mask) = &cache.head_mask {
            dh.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
        }
        let h = self.config.hidden_dim;
        let missing = || Error::Consistency("cache is missing stream activations".into());

        match self.variant() {
            Variant::ConvL | Variant::FcL | Variant::Fu1 => {
                let mut offset = 0;
                let streams = [
                    (&self.conv_lstm, &mut g.conv_lstm, &cache.conv, &s.conv),
                    (&self.fc_lstm, &mut g.fc_lstm, &cache.fc, &s.fc),
                ];
                for (p, gp, c, xs) in streams {
                    let Some(p) = p else { continue };
                    let c = c.as_ref().ok_or_else(missing)?;
                    let up = Tensor::vector(dh[offset..offset + h].to_vec());
                    offset += h;
                    let (pg, _) = lstm::bptt(xs, p, c, &[up])?;
                    *gp = Some(pg);
                }
            }
            Variant::Fu2 => {
                let merge_lstm = self.merge_lstm.as_ref().expect("fu_2");
                let mc = cache.merge_cache.as_ref().ok_or_else(missing)?;
                let (mg, dms) = lstm::bptt(&cache.merged, merge_lstm, mc, &[Tensor::vector(dh)])?;
                g.merge_lstm = Some(mg);

                let merge = self.merge.as_ref().expect("fu_2");
                let gmerge = g.merge.as_mut().expect("fu_2");
                let t_len = s.len();
                let mut up_conv = Vec::with_capacity(t_len);
                let mut up_fc = Vec::with_capacity(t_len);
                for (t, dm) in dms.into_iter().enumerate() {
                    let mut dm = dm.into_values();
                    if let Some(mask) = cache.merge_masks.get(t) {
                        dm.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
                    }
                    let du = merge.backward(gmerge, &cache.merge_inputs[t], &dm);
                    up_conv.push(Tensor::vector(du[..h].to_vec()));
                    up_fc.push(Tensor::vector(du[h..].to_vec()));
                }
                let cc = cache.conv.as_ref().ok_or_else(missing)?;
                let cf = cache.fc.as_ref().ok_or_else(missing)?;
                g.conv_lstm = Some(lstm::bptt(&s.conv, self.conv_lstm.as_ref().expect("fu_2"), cc, &up_conv)?.0);
                g.fc_lstm = Some(lstm::bptt(&s.fc, self.fc_lstm.as_ref().expect("fu_2"), cf, &up_fc)?.0);
            }
        }
        Ok(g)
    }

    /// Eval-mode class probabilities.
    pub fn probabilities(&self, s: &Sample) -> Result<Tensor> {
        Ok(self.forward(s, Mode::Eval)?.0)
    }

    /// Arg-max of the eval-mode probabilities, ties to the lowest index.
    pub fn predict(&self, s: &Sample) -> Result<usize> {
        Ok(argmax(self.probabilities(s)?.values()))
    }
}

/// Everything [`FusionModel::backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    variant: Variant,
    seq_len: usize,
    conv: Option<LstmCache>,
    fc: Option<LstmCache>,
    merge_inputs: Vec<Vec<f64>>,
    merged_pre_dropout: Vec<Tensor>,
    merged: Vec<Tensor>,
    merge_masks: Vec<Vec<f64>>,
    merge_cache: Option<LstmCache>,
    head_input: Vec<f64>,
    head_mask: Option<Vec<f64>>,
    probs: Tensor,
}

impl ForwardCache {
    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    /// `fu_2` merge outputs `m_t` before dropout.
    pub fn merged_pre_dropout(&self) -> &[Tensor] {
        &self.merged_pre_dropout
    }

    /// `fu_2` merge outputs after dropout, as fed to the merge LSTM.
    pub fn merged(&self) -> &[Tensor] {
        &self.merged
    }

    /// Input to the classifier head after dropout.
    pub fn head_input(&self) -> &[f64] {
        &self.head_input
    }

    /// Per-timestep `fu_2` merge masks (`0` or `1/(1-rate)`); empty when no
    /// dropout was drawn.
    pub fn merge_masks(&self) -> &[Vec<f64>] {
        &self.merge_masks
    }

    pub fn head_mask(&self) -> Option<&[f64]> {
        self.head_mask.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(cfg: &ModelConfig, t: usize, rng: &mut Rng) -> Sample {
        let frame = |d: usize, rng: &mut Rng| Tensor::vector((0..d).map(|_| rng.normal()).collect());
        let conv = (0..t).map(|_| frame(cfg.conv_dim, rng)).collect();
        let fc = (0..t).map(|_| frame(cfg.fc_dim, rng)).collect();
        Sample::new("s", rng.below(cfg.num_classes), conv, fc).unwrap()
    }

    #[test]
    fn structure_per_variant() {
        let mut rng = Rng::new(1);
        let m = FusionModel::build(ModelConfig::new(Variant::ConvL, 5, 7, 3).with_hidden(4), &mut rng).unwrap();
        assert!(m.conv_lstm.is_some() && m.fc_lstm.is_none() && m.merge.is_none() && m.merge_lstm.is_none());
        let m = FusionModel::build(ModelConfig::new(Variant::Fu2, 5, 7, 3).with_hidden(4), &mut rng).unwrap();
        let lstms = [&m.conv_lstm, &m.fc_lstm, &m.merge_lstm]
            .iter()
            .filter(|p| p.is_some())
            .count();
        assert_eq!(lstms, 3);
        assert!(m.merge.is_some());
        let m = FusionModel::build(ModelConfig::new(Variant::Fu1, 5, 7, 3).with_hidden(4), &mut rng).unwrap();
        assert_eq!(m.head.weight.shape(), &[3, 8]);
    }

    #[test]
    fn counts_match_closed_form() {
        for v in Variant::ALL {
            let cfg = ModelConfig::new(v, 6, 9, 4).with_hidden(5).with_merge(3);
            let m = FusionModel::from_seed(cfg.clone(), 2).unwrap();
            assert_eq!(m.parameter_count(), cfg.closed_form_count(), "{v}");
        }
    }

    #[test]
    fn invalid_configs() {
        let mut rng = Rng::new(1);
        let mut cfg = ModelConfig::new(Variant::ConvL, 5, 7, 1);
        assert!(matches!(
            FusionModel::build(cfg.clone(), &mut rng),
            Err(Error::Config(_))
        ));
        cfg.num_classes = 3;
        cfg.dropout_rate = 1.0;
        assert!(matches!(
            FusionModel::build(cfg.clone(), &mut rng),
            Err(Error::Config(_))
        ));
        cfg.dropout_rate = 0.0;
        cfg.hidden_dim = 0;
        assert!(matches!(FusionModel::build(cfg, &mut rng), Err(Error::Config(_))));
        assert!("fu_3".parse::<Variant>().is_err());
    }

    #[test]
    fn outputs_on_simplex_and_eval_deterministic() {
        let mut rng = Rng::new(4);
        for v in Variant::ALL {
            let cfg = ModelConfig::new(v, 6, 8, 3).with_hidden(4).with_merge(4);
            let m = FusionModel::build(cfg.clone(), &mut rng).unwrap();
            let s = sample(&cfg, 5, &mut rng);
            let (p, _) = m.forward(&s, Mode::Eval).unwrap();
            assert!((p.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.values().iter().all(|&x| x > 0.0));
            let (p2, _) = m.forward(&s, Mode::Eval).unwrap();
            assert_eq!(p, p2);
            let (pt, _) = m.forward(&s, Mode::Train(&mut rng)).unwrap();
            assert!((pt.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(m.predict(&s).unwrap(), argmax(p.values()));
        }
    }

    #[test]
    fn dimension_mismatch_names_video() {
        let mut rng = Rng::new(4);
        let cfg = ModelConfig::new(Variant::FcL, 6, 8, 3).with_hidden(4);
        let m = FusionModel::build(cfg.clone(), &mut rng).unwrap();
        let mut s = sample(&cfg, 3, &mut rng);
        s.video_id = "clip_17".into();
        s.fc[1] = Tensor::zeros(&[7]);
        let err = m.forward(&s, Mode::Eval).unwrap_err();
        assert!(err.to_string().contains("clip_17"), "{err}");
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = Rng::new(4);
        let cfg = ModelConfig::new(Variant::Fu2, 6, 8, 3).with_hidden(4).with_merge(4);
        let m = FusionModel::build(cfg.clone(), &mut rng).unwrap();
        let s = sample(&cfg, 3, &mut rng);
        let s4 = sample(&cfg, 4, &mut rng);
        let (_, cache) = m.forward(&s, Mode::Eval).unwrap();
        assert!(matches!(m.backward(&s4, 0, &cache), Err(Error::Consistency(_))));
        let other = FusionModel::build(ModelConfig::new(Variant::Fu1, 6, 8, 3).with_hidden(4), &mut rng).unwrap();
        assert!(matches!(other.backward(&s, 0, &cache), Err(Error::Consistency(_))));
    }

    #[test]
    fn zero_block_only_for_fusion() {
        let mut m = FusionModel::from_seed(ModelConfig::new(Variant::ConvL, 3, 3, 2).with_hidden(2), 0).unwrap();
        assert!(m.zero_merge_block(FeatureStream::Conv).is_err());
        let mut m =
            FusionModel::from_seed(ModelConfig::new(Variant::Fu2, 3, 3, 2).with_hidden(2).with_merge(3), 0).unwrap();
        m.zero_merge_block(FeatureStream::Fc).unwrap();
        let w = &m.merge.as_ref().unwrap().weight;
        for r in 0..3 {
            assert_eq!(&w.row(r)[2..], &[0.0, 0.0]);
            assert!(w.row(r)[..2].iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            assert_eq!(Variant::from_code(v.code()), Some(v));
        }
    }
}
