//! Deterministic mini-batch training.
//!
//! Every epoch reshuffles the training set with a stream keyed by
//! `(seed, epoch)`. Each sample's dropout masks come from a stream keyed by
//! `(seed, epoch, position)`, so per-sample passes can run in parallel while
//! the batch reduction (a sum in batch order, then a mean) and the optimizer
//! step stay serial. The result is bit-reproducible for a given seed.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::model::{FusionModel, Gradients, Mode, Sample};
use crate::rng::{Rng, Stream};
use crate::tensor::{argmax, cross_entropy, Tensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Rescale the batch gradient to at most this global L2 norm.
    pub clip_norm: Option<f64>,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 16,
            epochs: 30,
            clip_norm: None,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must be in [0, 1)".into());
        }
        if self.epsilon <= 0.0 {
            return bad("adam epsilon must be positive".into());
        }
        if let Some(c) = self.clip_norm {
            if c <= 0.0 {
                return bad(format!("clip norm must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair per trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        Self {
            first: params.iter().map(|t| t.zeros_like()).collect(),
            second: params.iter().map(|t| t.zeros_like()).collect(),
            step: 0,
        }
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[&Tensor], state: &mut AdamState, hp: &Hyperparams) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Consistency(format!(
            "adam: {} params, {} grads, {} moment tensors",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first) {
        p.check_same("adam_step", g)?;
        p.check_same("adam_step", m)?;
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        let pv = p.values_mut();
        let mv = m.values_mut();
        let vv = v.values_mut();
        for (j, &gj) in g.values().iter().enumerate() {
            mv[j] = hp.beta1 * mv[j] + (1.0 - hp.beta1) * gj;
            vv[j] = hp.beta2 * vv[j] + (1.0 - hp.beta2) * gj * gj;
            let m_hat = mv[j] / c1;
            let v_hat = vv[j] / c2;
            pv[j] -= hp.learning_rate * m_hat / (v_hat.sqrt() + hp.epsilon);
        }
    }
    Ok(())
}

pub fn sgd_step(params: &mut [&mut Tensor], grads: &[&Tensor], learning_rate: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Consistency("sgd: parameter/gradient count mismatch".into()));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        p.axpy(-learning_rate, g)?;
    }
    Ok(())
}

/// Applies one optimizer update to a model.
pub struct Optimizer {
    hp: Hyperparams,
    adam: AdamState,
}

impl Optimizer {
    pub fn new(model: &FusionModel, hp: &Hyperparams) -> Self {
        Self {
            hp: hp.clone(),
            adam: AdamState::new(&model.tensors()),
        }
    }

    pub fn state(&self) -> &AdamState {
        &self.adam
    }

    pub fn step(&mut self, model: &mut FusionModel, grads: &Gradients) -> Result<()> {
        let g = grads.tensors();
        let mut p = model.tensors_mut();
        match self.hp.optimizer {
            OptimizerKind::Adam => adam_step(&mut p, &g, &mut self.adam, &self.hp),
            OptimizerKind::Sgd => sgd_step(&mut p, &g, self.hp.learning_rate),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_accuracy: Option<f64>,
    /// Wall-clock seconds; excluded from serialized logs.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    pub validation: Option<&'a [Sample]>,
    /// Write `epoch_NNN.fsm` here after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
    /// Multiplied into every batch gradient; zeros freeze coordinates.
    pub grad_mask: Option<&'a Gradients>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochRecord)>,
}

/// Summed gradient, summed loss and number of correct train-mode predictions
/// over `batch`, reduced in batch order.
pub fn batch_gradient(
    model: &FusionModel,
    batch: &[&Sample],
    seed: u64,
    epoch: u32,
    first_position: usize,
) -> Result<(Gradients, f64, usize)> {
    let per_sample: Vec<(Gradients, f64, bool)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = Rng::derived(seed, Stream::Dropout, epoch, (first_position + i) as u32);
            let (probs, cache) = model.forward(s, Mode::Train(&mut rng))?;
            let loss = cross_entropy(probs.values(), s.label).map_err(|e| Error::Sample {
                video_id: s.video_id.clone(),
                source: Box::new(e),
            })?;
            let g = model.backward(s, s.label, &cache)?;
            Ok((g, loss, argmax(probs.values()) == s.label))
        })
        .collect::<Result<_>>()?;
    let mut total = model.zeros_like();
    let mut loss = 0.0;
    let mut correct = 0;
    for (g, l, ok) in &per_sample {
        total.axpy(1.0, g)?;
        loss += l;
        correct += usize::from(*ok);
    }
    Ok((total, loss, correct))
}

pub fn global_norm(g: &Gradients) -> f64 {
    g.tensors().iter().map(|t| t.sum_sq()).sum::<f64>().sqrt()
}

fn apply_mask(g: &mut Gradients, mask: &Gradients) -> Result<()> {
    let m = mask.tensors();
    let gs = g.tensors_mut();
    if m.len() != gs.len() {
        return Err(Error::Consistency("gradient mask does not match the model".into()));
    }
    for (t, mt) in gs.into_iter().zip(m) {
        t.check_same("gradient mask", mt)?;
        t.values_mut().iter_mut().zip(mt.values()).for_each(|(a, b)| *a *= b);
    }
    Ok(())
}

pub fn accuracy(model: &FusionModel, samples: &[Sample]) -> Result<f64> {
    let correct: Vec<bool> = samples
        .par_iter()
        .map(|s| Ok(model.predict(s)? == s.label))
        .collect::<Result<_>>()?;
    Ok(correct.iter().filter(|&&c| c).count() as f64 / samples.len().max(1) as f64)
}

/// Trains `model` in place on `data`.
pub fn train(
    model: &mut FusionModel,
    data: &[Sample],
    hp: &Hyperparams,
    mut opts: TrainOptions<'_>,
) -> Result<TrainHistory> {
    hp.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let mut optimizer = Optimizer::new(model, hp);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..hp.epochs {
        let started = Instant::now();
        let mut shuffle = Rng::derived(hp.seed, Stream::Shuffle, epoch as u32, 0);
        order.sort_unstable();
        shuffle.shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, chunk) in order.chunks(hp.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let (mut grads, loss, ok) = batch_gradient(model, &batch, hp.seed, epoch as u32, b * hp.batch_size)?;
            loss_sum += loss;
            correct += ok;
            for t in grads.tensors_mut() {
                t.scale(1.0 / batch.len() as f64);
            }
            if let Some(mask) = opts.grad_mask {
                apply_mask(&mut grads, mask)?;
            }
            if let Some(c) = hp.clip_norm {
                let norm = global_norm(&grads);
                if norm > c {
                    for t in grads.tensors_mut() {
                        t.scale(c / norm);
                    }
                }
            }
            optimizer.step(model, &grads)?;
        }

        let validation_accuracy = opts.validation.map(|v| accuracy(model, v)).transpose()?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
            validation_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(dir) = &opts.checkpoint_dir {
            checkpoint::save(model, &dir.join(format!("epoch_{:03}.fsm", epoch + 1)))?;
        }
        if let Some(cb) = opts.on_epoch.as_mut() {
            cb(&record);
        }
        history.epochs.push(record);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(lr: f64) -> Hyperparams {
        Hyperparams {
            learning_rate: lr,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::vector(vec![0.3, -1.2, 4.0]);
        let before = p.clone();
        let g = Tensor::zeros(&[3]);
        let mut st = AdamState::new(&[&p]);
        for _ in 0..5 {
            adam_step(&mut [&mut p], &[&g], &mut st, &hp(1e-2)).unwrap();
        }
        assert_eq!(p, before);
        assert!(st.first[0].max_abs() == 0.0 && st.second[0].max_abs() == 0.0);
        assert_eq!(st.step, 5);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let lr = 1e-3;
        for g in [0.5, -2.0, 1e-3] {
            let mut p = Tensor::vector(vec![1.0]);
            let gt = Tensor::vector(vec![g]);
            let mut st = AdamState::new(&[&p]);
            adam_step(&mut [&mut p], &[&gt], &mut st, &hp(lr)).unwrap();
            let delta = p.values()[0] - 1.0;
            let closed = -lr * g / (g.abs() + 1e-8);
            assert!((delta - closed).abs() < 1e-15, "{delta} {closed}");
            // Relative gap to the signed step is eps/|g|.
            if g.abs() >= 1e-2 {
                assert!((delta + lr * g.signum()).abs() < 1e-6 * lr);
            }
        }
    }

    #[test]
    fn step_size_bounded_for_steady_gradient_scale() {
        let lr = 1e-3;
        let mut rng = Rng::new(5);
        let scales: Vec<f64> = (0..20).map(|i| 10f64.powi(i % 7 - 3)).collect();
        let mut p = Tensor::vector((0..20).map(|_| rng.normal()).collect());
        let mut st = AdamState::new(&[&p]);
        for _ in 0..300 {
            let g = Tensor::vector(
                scales
                    .iter()
                    .map(|s| if rng.uniform() < 0.5 { -s } else { *s })
                    .collect(),
            );
            let before = p.clone();
            adam_step(&mut [&mut p], &[&g], &mut st, &hp(lr)).unwrap();
            for (a, b) in p.values().iter().zip(before.values()) {
                assert!((a - b).abs() <= lr * (1.0 + 1e-3));
            }
        }
    }

    #[test]
    fn gradient_spike_can_exceed_lr() {
        // With beta1 = 0.9, beta2 = 0.999 the worst case is lr * 0.1 / sqrt(0.001).
        let lr = 1e-3;
        let mut p = Tensor::vector(vec![0.0]);
        let mut st = AdamState::new(&[&p]);
        let tiny = Tensor::vector(vec![1e-9]);
        for _ in 0..5000 {
            adam_step(&mut [&mut p], &[&tiny], &mut st, &hp(lr)).unwrap();
        }
        let before = p.values()[0];
        adam_step(&mut [&mut p], &[&Tensor::vector(vec![1.0])], &mut st, &hp(lr)).unwrap();
        let step = (p.values()[0] - before).abs();
        assert!(step > lr && step <= lr * 0.1 / 0.001f64.sqrt() * (1.0 + 1e-9), "{step}");
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::vector(vec![1.0, 2.0]);
        let g = Tensor::vector(vec![1.0]);
        let mut st = AdamState::new(&[&p]);
        assert!(adam_step(&mut [&mut p], &[&g], &mut st, &hp(1e-3)).is_err());
    }

    #[test]
    fn invalid_hyperparams() {
        assert!(hp(-1.0).validate().is_err());
        let h = Hyperparams {
            batch_size: 0,
            ..Hyperparams::default()
        };
        assert!(h.validate().is_err());
    }
}
