//! Standard forget-gate LSTM (no peepholes), its sequence-to-one and
//! sequence-to-sequence run modes, and exact backpropagation through time.
//!
//! Gate weights are stored stacked: rows `[0, H)` are the input gate, then the
//! forget gate, the output gate and the candidate `g`. Per step:
//!
//! ```text
//! i = σ(W_i x + U_i h + b_i)    f = σ(W_f x + U_f h + b_f)
//! o = σ(W_o x + U_o h + b_o)    g = tanh(W_g x + U_g h + b_g)
//! c' = f ⊙ c + i ⊙ g            h' = o ⊙ tanh(c')
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded_init, Init, Rng};
use crate::tensor::{add_matvec_t, add_outer, dot, sigmoid, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Output = 2,
    Candidate = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Candidate];
}

pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    input_dim: usize,
    hidden_dim: usize,
    /// `[4H, D]`, gate-major.
    pub w_input: Tensor,
    /// `[4H, H]`, gate-major.
    pub w_hidden: Tensor,
    /// `[4H]`.
    pub bias: Tensor,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            w_input: Tensor::zeros(&[4 * hidden_dim, input_dim]),
            w_hidden: Tensor::zeros(&[4 * hidden_dim, hidden_dim]),
            bias: Tensor::zeros(&[4 * hidden_dim]),
        }
    }

    /// Glorot-uniform weights drawn per gate block, zero biases except the
    /// forget gate which starts at [`FORGET_BIAS_INIT`].
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        let h = hidden_dim;
        for gate in Gate::ALL {
            let wx = seeded_init(&[h, input_dim], Init::GlorotUniform, rng);
            let wh = seeded_init(&[h, h], Init::GlorotUniform, rng);
            p.gate_block_mut(gate, Which::Input).copy_from_slice(wx.values());
            p.gate_block_mut(gate, Which::Hidden).copy_from_slice(wh.values());
        }
        let fb = Gate::Forget as usize * h;
        p.bias.values_mut()[fb..fb + h].fill(FORGET_BIAS_INIT);
        p
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// `4 (H D + H² + H)`.
    pub fn closed_form_count(input_dim: usize, hidden_dim: usize) -> usize {
        4 * (hidden_dim * input_dim + hidden_dim * hidden_dim + hidden_dim)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn tensors(&self) -> [&Tensor; 3] {
        [&self.w_input, &self.w_hidden, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.w_input, &mut self.w_hidden, &mut self.bias]
    }

    pub fn gate_block(&self, gate: Gate, which: Which) -> &[f64] {
        let (t, cols) = self.block_source(which);
        let h = self.hidden_dim;
        let start = gate as usize * h * cols;
        &t.values()[start..start + h * cols]
    }

    pub fn gate_block_mut(&mut self, gate: Gate, which: Which) -> &mut [f64] {
        let h = self.hidden_dim;
        let cols = match which {
            Which::Input => self.input_dim,
            Which::Hidden => h,
            Which::Bias => 1,
        };
        let t = match which {
            Which::Input => &mut self.w_input,
            Which::Hidden => &mut self.w_hidden,
            Which::Bias => &mut self.bias,
        };
        let start = gate as usize * h * cols;
        &mut t.values_mut()[start..start + h * cols]
    }

    fn block_source(&self, which: Which) -> (&Tensor, usize) {
        match which {
            Which::Input => (&self.w_input, self.input_dim),
            Which::Hidden => (&self.w_hidden, self.hidden_dim),
            Which::Bias => (&self.bias, 1),
        }
    }
}

/// Which of a gate's three parameter blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Input,
    Hidden,
    Bias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    /// Emit only the final hidden state.
    SeqToOne,
    /// Emit every hidden state.
    SeqToSeq,
}

#[derive(Debug, Clone)]
struct Step {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates, `[i | f | o | g]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Activations recorded by [`forward`] for use in [`bptt`].
#[derive(Debug, Clone)]
pub struct LstmCache {
    mode: RunMode,
    input_dim: usize,
    hidden_dim: usize,
    steps: Vec<Step>,
}

impl LstmCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn mode(&self) -> RunMode {
        self.mode
    }

    /// Hidden state emitted at step `t`.
    pub fn hidden(&self, t: usize) -> Vec<f64> {
        let s = &self.steps[t];
        let h = self.hidden_dim;
        (0..h).map(|k| s.gates[2 * h + k] * s.tanh_c[k]).collect()
    }
}

fn step(p: &LstmParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let h = p.hidden_dim;
    let d = p.input_dim;
    let wx = p.w_input.values();
    let wh = p.w_hidden.values();
    let b = p.bias.values();
    let mut gates = vec![0.0; 4 * h];
    for (r, gv) in gates.iter_mut().enumerate() {
        let z = dot(&wx[r * d..(r + 1) * d], x) + dot(&wh[r * h..(r + 1) * h], h_prev) + b[r];
        *gv = if r < 3 * h { sigmoid(z) } else { z.tanh() };
    }
    let mut c = vec![0.0; h];
    let mut tanh_c = vec![0.0; h];
    let mut h_out = vec![0.0; h];
    for k in 0..h {
        let (i, f, o, g) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
        c[k] = f * c_prev[k] + i * g;
        tanh_c[k] = c[k].tanh();
        h_out[k] = o * tanh_c[k];
    }
    (h_out, c, gates, tanh_c)
}

fn check_input(x: &[f64], p: &LstmParams) -> Result<()> {
    if x.len() != p.input_dim {
        return Err(Error::dim("lstm input", &[x.len()], &[p.input_dim]));
    }
    Ok(())
}

/// One cell step.
pub fn lstm_cell(x: &Tensor, h_prev: &Tensor, c_prev: &Tensor, p: &LstmParams) -> Result<(Tensor, Tensor)> {
    check_input(x.values(), p)?;
    for s in [h_prev, c_prev] {
        if s.len() != p.hidden_dim {
            return Err(Error::dim("lstm state", s.shape(), &[p.hidden_dim]));
        }
    }
    let (h, c, _, _) = step(p, x.values(), h_prev.values(), c_prev.values());
    Ok((Tensor::vector(h), Tensor::vector(c)))
}

/// Runs the recurrence from a zero state and records everything [`bptt`] needs.
/// Returns the emitted hidden states: one for [`RunMode::SeqToOne`], `T` for
/// [`RunMode::SeqToSeq`].
pub fn forward(xs: &[Tensor], p: &LstmParams, mode: RunMode) -> Result<(Vec<Tensor>, LstmCache)> {
    if xs.is_empty() {
        return Err(Error::EmptySequence("lstm"));
    }
    let hd = p.hidden_dim;
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    let mut steps = Vec::with_capacity(xs.len());
    let mut outputs = Vec::with_capacity(if mode == RunMode::SeqToSeq { xs.len() } else { 1 });
    for x in xs {
        check_input(x.values(), p)?;
        let (h_new, c_new, gates, tanh_c) = step(p, x.values(), &h, &c);
        steps.push(Step {
            x: x.values().to_vec(),
            h_prev: std::mem::replace(&mut h, h_new),
            c_prev: std::mem::replace(&mut c, c_new),
            gates,
            tanh_c,
        });
        if mode == RunMode::SeqToSeq {
            outputs.push(Tensor::vector(h.clone()));
        }
    }
    if mode == RunMode::SeqToOne {
        outputs.push(Tensor::vector(h));
    }
    let cache = LstmCache {
        mode,
        input_dim: p.input_dim,
        hidden_dim: hd,
        steps,
    };
    Ok((outputs, cache))
}

pub fn run_seq_to_one(xs: &[Tensor], p: &LstmParams) -> Result<Tensor> {
    let (mut out, _) = forward(xs, p, RunMode::SeqToOne)?;
    Ok(out.pop().expect("one output"))
}

pub fn run_seq_to_seq(xs: &[Tensor], p: &LstmParams) -> Result<Vec<Tensor>> {
    Ok(forward(xs, p, RunMode::SeqToSeq)?.0)
}

/// Exact gradients of `Σ_t ⟨upstream_t, h_t⟩` over the emitted states with
/// respect to every parameter and every input.
pub fn bptt(
    xs: &[Tensor],
    p: &LstmParams,
    cache: &LstmCache,
    upstream: &[Tensor],
) -> Result<(LstmParams, Vec<Tensor>)> {
    let t_len = cache.steps.len();
    if xs.len() != t_len {
        return Err(Error::Consistency(format!(
            "cache holds {t_len} steps but the sequence has {}",
            xs.len()
        )));
    }
    if cache.input_dim != p.input_dim || cache.hidden_dim != p.hidden_dim {
        return Err(Error::Consistency(format!(
            "cache dims ({}, {}) do not match parameters ({}, {})",
            cache.input_dim, cache.hidden_dim, p.input_dim, p.hidden_dim
        )));
    }
    let expected = match cache.mode {
        RunMode::SeqToOne => 1,
        RunMode::SeqToSeq => t_len,
    };
    if upstream.len() != expected {
        return Err(Error::Consistency(format!(
            "expected {expected} upstream gradients, got {}",
            upstream.len()
        )));
    }
    let h = p.hidden_dim;
    for u in upstream {
        if u.len() != h {
            return Err(Error::dim("bptt upstream", u.shape(), &[h]));
        }
    }

    let mut grads = LstmParams::zeros(p.input_dim, h);
    let mut dxs = vec![Tensor::zeros(&[p.input_dim]); t_len];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];

    for t in (0..t_len).rev() {
        let s = &cache.steps[t];
        let up = match cache.mode {
            RunMode::SeqToSeq => Some(upstream[t].values()),
            RunMode::SeqToOne if t == t_len - 1 => Some(upstream[0].values()),
            RunMode::SeqToOne => None,
        };
        for k in 0..h {
            let dh = dh_next[k] + up.map_or(0.0, |u| u[k]);
            let (i, f, o, g) = (s.gates[k], s.gates[h + k], s.gates[2 * h + k], s.gates[3 * h + k]);
            let tc = s.tanh_c[k];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
            let di = dc * g;
            let dg = dc * i;
            let df = dc * s.c_prev[k];
            dc_next[k] = dc * f;
            dz[k] = di * i * (1.0 - i);
            dz[h + k] = df * f * (1.0 - f);
            dz[2 * h + k] = d_o * o * (1.0 - o);
            dz[3 * h + k] = dg * (1.0 - g * g);
        }
        add_outer(&mut grads.w_input, &dz, &s.x);
        add_outer(&mut grads.w_hidden, &dz, &s.h_prev);
        for (b, d) in grads.bias.values_mut().iter_mut().zip(&dz) {
            *b += d;
        }
        add_matvec_t(dxs[t].values_mut(), &p.w_input, &dz);
        dh_next.fill(0.0);
        add_matvec_t(&mut dh_next, &p.w_hidden, &dz);
    }
    Ok((grads, dxs))
}
