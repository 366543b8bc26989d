//! Central finite-difference verification of the analytic model gradients.
//!
//! Differencing a loss evaluated in f64 leaves an absolute error of roughly
//! `1e-16 * |loss| / step`, which swamps coordinates whose gradient is below
//! about 1e-6. By default the harness therefore differences an independent
//! double-double implementation of the forward pass ([`reference_loss`]) that
//! replays the dropout masks of the analytic pass.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lstm::LstmParams;
use crate::model::{FusionModel, Gradients, Mode, ModelConfig, Sample, Variant};
use crate::rng::{Rng, Stream};
use crate::tensor::{cross_entropy, Tensor, PROB_FLOOR};
use crate::wide::Wide;

/// Small model and input sizes where differencing every coordinate is cheap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DeskDims {
    pub conv_dim: usize,
    pub fc_dim: usize,
    pub hidden: usize,
    pub merge: usize,
    pub frames: usize,
    pub classes: usize,
}

impl Default for DeskDims {
    fn default() -> Self {
        Self {
            conv_dim: 6,
            fc_dim: 8,
            hidden: 4,
            merge: 4,
            frames: 4,
            classes: 3,
        }
    }
}

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Arithmetic used for the differenced loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// The production f64 forward pass.
    Double,
    /// The double-double reference forward pass.
    #[default]
    Extended,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub variant: Variant,
    pub seed: u64,
    pub step: f64,
    pub precision: Precision,
    pub parameters: usize,
    pub max_relative_error: f64,
    pub mean_relative_error: f64,
    /// `tensor[index]` of the worst coordinate.
    pub worst: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Random model, sample and label for a gradient check.
pub fn desk_problem(variant: Variant, dims: DeskDims, seed: u64) -> Result<(FusionModel, Sample)> {
    let cfg = ModelConfig::new(variant, dims.conv_dim, dims.fc_dim, dims.classes)
        .with_hidden(dims.hidden)
        .with_merge(dims.merge);
    let model = FusionModel::from_seed(cfg, seed)?;
    let mut rng = Rng::derived(seed, Stream::GradCheck, 0, 0);
    let mut frames = |d: usize| -> Vec<Tensor> {
        (0..dims.frames)
            .map(|_| Tensor::vector((0..d).map(|_| rng.normal()).collect()))
            .collect()
    };
    let conv = frames(dims.conv_dim);
    let fc = frames(dims.fc_dim);
    let label = rng.below(dims.classes);
    Ok((model, Sample::new("gradcheck", label, conv, fc)?))
}

/// Loss of `model` on `s` with dropout masks drawn from a copy of `masks`,
/// so repeated calls see identical masks.
pub fn masked_loss(model: &FusionModel, s: &Sample, masks: &Rng) -> Result<f64> {
    let mut rng = masks.clone();
    let (p, _) = model.forward(s, Mode::Train(&mut rng))?;
    cross_entropy(p.values(), s.label)
}

fn wide_lstm(xs: &[Vec<Wide>], p: &LstmParams, emit_all: bool) -> Vec<Vec<Wide>> {
    let (d, h) = (p.input_dim(), p.hidden_dim());
    let (wx, wh, b) = (p.w_input.values(), p.w_hidden.values(), p.bias.values());
    let mut hs = vec![Wide::ZERO; h];
    let mut cs = vec![Wide::ZERO; h];
    let mut out = Vec::new();
    for x in xs {
        let z: Vec<Wide> = (0..4 * h)
            .map(|r| {
                let from_x: Wide = (0..d).map(|k| Wide::new(wx[r * d + k]) * x[k]).sum();
                let from_h: Wide = (0..h).map(|k| Wide::new(wh[r * h + k]) * hs[k]).sum();
                from_x + from_h + Wide::new(b[r])
            })
            .collect();
        for k in 0..h {
            let (i, f, o) = (z[k].sigmoid(), z[h + k].sigmoid(), z[2 * h + k].sigmoid());
            let g = z[3 * h + k].tanh();
            cs[k] = f * cs[k] + i * g;
            hs[k] = o * cs[k].tanh();
        }
        if emit_all {
            out.push(hs.clone());
        }
    }
    if !emit_all {
        out.push(hs);
    }
    out
}

fn wide_affine(x: &[Wide], w: &Tensor, b: &Tensor) -> Vec<Wide> {
    let cols = w.cols();
    (0..w.rows())
        .map(|r| {
            let row = &w.values()[r * cols..(r + 1) * cols];
            row.iter().zip(x).map(|(&a, &v)| Wide::new(a) * v).sum::<Wide>() + Wide::new(b.values()[r])
        })
        .collect()
}

fn wide_mask(x: &mut [Wide], mask: Option<&[f64]>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, &k)| *v = *v * Wide::new(k));
    }
}

/// Cross-entropy of `model` on `s` computed in double-double arithmetic by a
/// separate implementation of every variant's forward pass. Dropout is
/// replaced by the given masks (as recorded in a [`crate::model::ForwardCache`]).
pub fn reference_loss(
    model: &FusionModel,
    s: &Sample,
    merge_masks: &[Vec<f64>],
    head_mask: Option<&[f64]>,
) -> Result<Wide> {
    let frames = |xs: &[Tensor]| -> Vec<Vec<Wide>> {
        xs.iter()
            .map(|x| x.values().iter().map(|&v| Wide::new(v)).collect())
            .collect()
    };
    let cfg = model.config();
    if s.label >= cfg.num_classes {
        return Err(Error::Index {
            index: s.label,
            len: cfg.num_classes,
        });
    }
    let mut head_in: Vec<Wide> = match model.variant() {
        Variant::ConvL | Variant::FcL | Variant::Fu1 => {
            let mut v = Vec::new();
            if let Some(p) = &model.conv_lstm {
                v.extend(wide_lstm(&frames(&s.conv), p, false).remove(0));
            }
            if let Some(p) = &model.fc_lstm {
                v.extend(wide_lstm(&frames(&s.fc), p, false).remove(0));
            }
            v
        }
        Variant::Fu2 => {
            let missing = || Error::Consistency("fu_2 model is missing a component".into());
            let hc = wide_lstm(&frames(&s.conv), model.conv_lstm.as_ref().ok_or_else(missing)?, true);
            let hf = wide_lstm(&frames(&s.fc), model.fc_lstm.as_ref().ok_or_else(missing)?, true);
            let merge = model.merge.as_ref().ok_or_else(missing)?;
            let mut merged = Vec::with_capacity(hc.len());
            for (t, (a, b)) in hc.iter().zip(&hf).enumerate() {
                let u: Vec<Wide> = a.iter().chain(b).copied().collect();
                let mut m = wide_affine(&u, &merge.weight, &merge.bias);
                wide_mask(&mut m, merge_masks.get(t).map(Vec::as_slice));
                merged.push(m);
            }
            wide_lstm(&merged, model.merge_lstm.as_ref().ok_or_else(missing)?, false).remove(0)
        }
    };
    if head_in.len() != model.head.weight.cols() {
        return Err(Error::dim(
            "reference head",
            &[head_in.len()],
            &[model.head.weight.cols()],
        ));
    }
    wide_mask(&mut head_in, head_mask);
    let logits = wide_affine(&head_in, &model.head.weight, &model.head.bias);
    let top = logits.iter().map(|z| z.hi()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<Wide> = logits.iter().map(|&z| (z - Wide::new(top)).exp()).collect();
    let total: Wide = exps.iter().copied().sum();
    Ok(-(exps[s.label] / total + Wide::new(PROB_FLOOR)).ln())
}

/// Extended-precision check with no tampering.
pub fn grad_check(variant: Variant, dims: DeskDims, seed: u64, step: f64) -> Result<GradCheckReport> {
    grad_check_with(variant, dims, seed, step, Precision::Extended, |_| {})
}

/// Like [`grad_check`] with a choice of arithmetic; `tamper` may alter the
/// analytic gradient before the comparison (to confirm the harness notices
/// faults).
pub fn grad_check_with(
    variant: Variant,
    dims: DeskDims,
    seed: u64,
    step: f64,
    precision: Precision,
    tamper: impl FnOnce(&mut Gradients),
) -> Result<GradCheckReport> {
    let (mut model, s) = desk_problem(variant, dims, seed)?;
    let masks = Rng::derived(seed, Stream::Dropout, 0, 0);
    let mut rng = masks.clone();
    let (_, cache) = model.forward(&s, Mode::Train(&mut rng))?;
    let mut analytic = model.backward(&s, s.label, &cache)?;
    tamper(&mut analytic);
    let merge_masks = cache.merge_masks().to_vec();
    let head_mask = cache.head_mask().map(<[f64]>::to_vec);
    let delta = |model: &FusionModel| -> Result<Wide> {
        match precision {
            Precision::Double => Ok(Wide::new(masked_loss(model, &s, &masks)?)),
            Precision::Extended => reference_loss(model, &s, &merge_masks, head_mask.as_deref()),
        }
    };

    let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.values().to_vec()).collect();

    let mut max = 0.0;
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut worst = (String::new(), 0.0, 0.0);
    for (ti, (name, grads)) in names.iter().zip(&analytic).enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = model.tensors()[ti].values()[j];
            let (up, down) = (orig + step, orig - step);
            model.tensors_mut()[ti].values_mut()[j] = up;
            let plus = delta(&model)?;
            model.tensors_mut()[ti].values_mut()[j] = down;
            let minus = delta(&model)?;
            model.tensors_mut()[ti].values_mut()[j] = orig;

            // Divide by the perturbation actually applied after f64 rounding.
            let numeric = (plus - minus).to_f64() / (up - down);
            let rel = relative_error(a, numeric);
            sum += rel;
            count += 1;
            if rel > max || count == 1 {
                max = rel;
                worst = (format!("{name}[{j}]"), a, numeric);
            }
        }
    }
    Ok(GradCheckReport {
        variant,
        seed,
        step,
        precision,
        parameters: count,
        max_relative_error: max,
        mean_relative_error: sum / count as f64,
        worst: worst.0,
        worst_analytic: worst.1,
        worst_numeric: worst.2,
    })
}
