//! Dense row-major `f64` tensors and the handful of kernels the models need.
//!
//! There is no broadcasting: every operation checks shapes up front and
//! returns [`Error::Dimension`] on mismatch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor added to the target probability before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::dim("tensor", &shape, &[values.len()]));
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::dim("tensor", &shape, &[values.len()]));
        }
        Ok(Self { shape, values })
    }

    /// 1-D tensor over `values`. Panics on an empty vector.
    pub fn vector(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "vector must be non-empty");
        Self {
            shape: vec![values.len()],
            values,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "invalid shape {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            values: vec![v; shape.iter().product()],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        t
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.values.iter_mut().for_each(|x| *x = v);
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        self.check_same("axpy", other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn sum_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn check_same(&self, op: &'static str, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(op, &self.shape, &other.shape));
        }
        Ok(())
    }
}

/// `y = W x + b`, `W` of shape `[out, in]`.
pub fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (rows, cols) = check_affine(x, w, b)?;
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        out.push(dot(&w.values[r * cols..(r + 1) * cols], x) + b.values[r]);
    }
    Ok(Tensor::vector(out))
}

fn check_affine(x: &[f64], w: &Tensor, b: &Tensor) -> Result<(usize, usize)> {
    if w.shape.len() != 2 || w.shape[1] != x.len() {
        return Err(Error::dim("affine", &w.shape, &[x.len()]));
    }
    if b.shape != [w.shape[0]] {
        return Err(Error::dim("affine", &w.shape, &b.shape));
    }
    Ok((w.shape[0], w.shape[1]))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += W^T dy` for `W` of shape `[rows, cols]`.
pub(crate) fn add_matvec_t(out: &mut [f64], w: &Tensor, dy: &[f64]) {
    let cols = w.cols();
    debug_assert_eq!(out.len(), cols);
    debug_assert_eq!(dy.len(), w.rows());
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &w.values[r * cols..(r + 1) * cols];
        for (o, wv) in out.iter_mut().zip(row) {
            *o += g * wv;
        }
    }
}

/// `G += dy ⊗ x`, `G` of shape `[dy.len(), x.len()]`.
pub(crate) fn add_outer(g: &mut Tensor, dy: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(g.shape, [dy.len(), cols]);
    for (r, &d) in dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = &mut g.values[r * cols..(r + 1) * cols];
        for (gv, xv) in row.iter_mut().zip(x) {
            *gv += d * xv;
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(z: &[f64]) -> Result<Tensor> {
    if z.is_empty() {
        return Err(Error::dim("softmax", &[0], &[1]));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(Tensor::vector(exps.into_iter().map(|e| e / sum).collect()))
}

/// `-ln(p[label] + PROB_FLOOR)`.
pub fn cross_entropy(p: &[f64], label: usize) -> Result<f64> {
    let pl = *p.get(label).ok_or(Error::Index {
        index: label,
        len: p.len(),
    })?;
    Ok(-(pl + PROB_FLOOR).ln())
}

/// Gradient of `cross_entropy(softmax(z), label)` with respect to the logits `z`,
/// given `p = softmax(z)`.
///
/// Exact including the probability floor: `p_y / (p_y + floor) * (p - onehot)`.
pub fn softmax_cross_entropy_grad(p: &[f64], label: usize) -> Result<Tensor> {
    let py = *p.get(label).ok_or(Error::Index {
        index: label,
        len: p.len(),
    })?;
    let s = py / (py + PROB_FLOOR);
    let mut g: Vec<f64> = p.iter().map(|v| s * v).collect();
    g[label] -= s;
    Ok(Tensor::vector(g))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
