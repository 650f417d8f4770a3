//! GRU summariser of the context window.
//!
//! Gate convention: `z` is the update gate, `r` the reset gate,
//! `h̃ = tanh(W_h x + U_h (r ⊙ h_prev) + b_h)` and
//! `h_t = (1 - z) ⊙ h_prev + z ⊙ h̃`. The state starts at zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_update: DenseMatrix,
    pub w_reset: DenseMatrix,
    pub w_candidate: DenseMatrix,
    pub u_update: DenseMatrix,
    pub u_reset: DenseMatrix,
    pub u_candidate: DenseMatrix,
    pub b_update: Vec<f64>,
    pub b_reset: Vec<f64>,
    pub b_candidate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub values: Vec<f64>,
    pub t: usize,
}

impl HiddenState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            values: vec![0.0; hidden_dim],
            t: 0,
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-step intermediates kept for backpropagation through time.
#[derive(Debug, Clone)]
struct StepRecord {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct GruTrace {
    steps: Vec<StepRecord>,
}

impl GruParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = || DenseMatrix::zeros(hidden_dim, input_dim);
        let u = || DenseMatrix::zeros(hidden_dim, hidden_dim);
        Self {
            input_dim,
            hidden_dim,
            w_update: w(),
            w_reset: w(),
            w_candidate: w(),
            u_update: u(),
            u_reset: u(),
            u_candidate: u(),
            b_update: vec![0.0; hidden_dim],
            b_reset: vec![0.0; hidden_dim],
            b_candidate: vec![0.0; hidden_dim],
        }
    }

    /// Normal initialisation scaled by `1/sqrt(fan_in)`; biases zero.
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        let sw = 1.0 / (input_dim.max(1) as f64).sqrt();
        let su = 1.0 / (hidden_dim.max(1) as f64).sqrt();
        for m in [&mut p.w_update, &mut p.w_reset, &mut p.w_candidate] {
            for x in m.data_mut() {
                *x = sw * rng.normal();
            }
        }
        for m in [&mut p.u_update, &mut p.u_reset, &mut p.u_candidate] {
            for x in m.data_mut() {
                *x = su * rng.normal();
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let (d, r) = (self.input_dim, self.hidden_dim);
        if r == 0 || d == 0 {
            return Err(Error::Shape("GRU dimensions must be positive".into()));
        }
        for m in [&self.w_update, &self.w_reset, &self.w_candidate] {
            m.validate()?;
            if m.rows() != r || m.cols() != d {
                return Err(Error::Shape(format!(
                    "GRU input weight is {}x{}, expected {r}x{d}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        for m in [&self.u_update, &self.u_reset, &self.u_candidate] {
            m.validate()?;
            if m.rows() != r || m.cols() != r {
                return Err(Error::Shape(format!(
                    "GRU hidden weight is {}x{}, expected {r}x{r}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        for b in [&self.b_update, &self.b_reset, &self.b_candidate] {
            if b.len() != r || !crate::numerics::all_finite(b) {
                return Err(Error::Shape("GRU bias has wrong length or non-finite entries".into()));
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        3 * self.hidden_dim * (self.input_dim + self.hidden_dim + 1)
    }

    pub fn for_each_slice(&self, f: &mut impl FnMut(&[f64])) {
        f(self.w_update.data());
        f(self.w_reset.data());
        f(self.w_candidate.data());
        f(self.u_update.data());
        f(self.u_reset.data());
        f(self.u_candidate.data());
        f(&self.b_update);
        f(&self.b_reset);
        f(&self.b_candidate);
    }

    pub fn for_each_slice_mut(&mut self, f: &mut impl FnMut(&mut [f64])) {
        f(self.w_update.data_mut());
        f(self.w_reset.data_mut());
        f(self.w_candidate.data_mut());
        f(self.u_update.data_mut());
        f(self.u_reset.data_mut());
        f(self.u_candidate.data_mut());
        f(&mut self.b_update);
        f(&mut self.b_reset);
        f(&mut self.b_candidate);
    }

    fn step_record(&self, x: &[f64], h_prev: &[f64]) -> StepRecord {
        let r_dim = self.hidden_dim;
        let mut z = self.b_update.clone();
        self.w_update.matvec_acc(x, &mut z);
        self.u_update.matvec_acc(h_prev, &mut z);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));

        let mut r = self.b_reset.clone();
        self.w_reset.matvec_acc(x, &mut r);
        self.u_reset.matvec_acc(h_prev, &mut r);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));

        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let mut n = self.b_candidate.clone();
        self.w_candidate.matvec_acc(x, &mut n);
        self.u_candidate.matvec_acc(&rh, &mut n);
        n.iter_mut().for_each(|v| *v = v.tanh());

        debug_assert_eq!(n.len(), r_dim);
        StepRecord {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            n,
            rh,
        }
    }

    fn check_step(&self, x: &[f64], h: &[f64]) -> Result<()> {
        if x.len() != self.input_dim || h.len() != self.hidden_dim {
            return Err(Error::Shape(format!(
                "GRU step got input {} / state {}, expected {} / {}",
                x.len(),
                h.len(),
                self.input_dim,
                self.hidden_dim
            )));
        }
        Ok(())
    }
}

fn combine(rec: &StepRecord) -> Vec<f64> {
    rec.h_prev
        .iter()
        .zip(&rec.z)
        .zip(&rec.n)
        .map(|((h, z), n)| (1.0 - z) * h + z * n)
        .collect()
}

pub fn gru_step(params: &GruParams, x_prev: &[f64], h_prev: &HiddenState) -> Result<HiddenState> {
    params.check_step(x_prev, &h_prev.values)?;
    let rec = params.step_record(x_prev, &h_prev.values);
    Ok(HiddenState {
        values: combine(&rec),
        t: h_prev.t + 1,
    })
}

/// Folds [`gru_step`] over the context rows starting from `h0`.
pub fn encode_context(params: &GruParams, context: &[Vec<f64>], h0: &HiddenState) -> Result<HiddenState> {
    if context.is_empty() {
        return Err(Error::Input("context window is empty".into()));
    }
    context.iter().try_fold(h0.clone(), |h, x| gru_step(params, x, &h))
}

/// Forward pass from the zero state that records what backpropagation needs.
pub fn encode_with_trace(params: &GruParams, context: &[Vec<f64>]) -> Result<(HiddenState, GruTrace)> {
    if context.is_empty() {
        return Err(Error::Input("context window is empty".into()));
    }
    let mut h = vec![0.0; params.hidden_dim];
    let mut steps = Vec::with_capacity(context.len());
    for x in context {
        params.check_step(x, &h)?;
        let rec = params.step_record(x, &h);
        h = combine(&rec);
        steps.push(rec);
    }
    let t = steps.len();
    Ok((HiddenState { values: h, t }, GruTrace { steps }))
}

/// Backpropagation through time; adds parameter gradients into `grads`.
pub fn backward_acc(params: &GruParams, trace: &GruTrace, grad_h_last: &[f64], grads: &mut GruParams) -> Result<()> {
    if grad_h_last.len() != params.hidden_dim {
        return Err(Error::Shape(format!(
            "cotangent has length {}, expected {}",
            grad_h_last.len(),
            params.hidden_dim
        )));
    }
    let r_dim = params.hidden_dim;
    let mut gh = grad_h_last.to_vec();
    let mut a_z = vec![0.0; r_dim];
    let mut a_r = vec![0.0; r_dim];
    let mut a_n = vec![0.0; r_dim];
    for rec in trace.steps.iter().rev() {
        let mut gh_prev = vec![0.0; r_dim];
        for j in 0..r_dim {
            let (z, n, h) = (rec.z[j], rec.n[j], rec.h_prev[j]);
            gh_prev[j] = gh[j] * (1.0 - z);
            a_n[j] = gh[j] * z * (1.0 - n * n);
            a_z[j] = gh[j] * (n - h) * z * (1.0 - z);
        }
        grads.w_candidate.add_outer(&a_n, &rec.x);
        grads.u_candidate.add_outer(&a_n, &rec.rh);
        add(&mut grads.b_candidate, &a_n);

        let mut g_rh = vec![0.0; r_dim];
        params.u_candidate.matvec_t_acc(&a_n, &mut g_rh);
        for j in 0..r_dim {
            let r = rec.r[j];
            gh_prev[j] += g_rh[j] * r;
            a_r[j] = g_rh[j] * rec.h_prev[j] * r * (1.0 - r);
        }

        grads.w_update.add_outer(&a_z, &rec.x);
        grads.u_update.add_outer(&a_z, &rec.h_prev);
        add(&mut grads.b_update, &a_z);
        params.u_update.matvec_t_acc(&a_z, &mut gh_prev);

        grads.w_reset.add_outer(&a_r, &rec.x);
        grads.u_reset.add_outer(&a_r, &rec.h_prev);
        add(&mut grads.b_reset, &a_r);
        params.u_reset.matvec_t_acc(&a_r, &mut gh_prev);

        gh = gh_prev;
    }
    Ok(())
}

/// Gradients of a scalar loss with cotangent `grad_h_last` at the final state.
pub fn encoder_backward(params: &GruParams, context: &[Vec<f64>], grad_h_last: &[f64]) -> Result<GruParams> {
    let (_, trace) = encode_with_trace(params, context)?;
    let mut grads = params.zeros_like();
    backward_acc(params, &trace, grad_h_last, &mut grads)?;
    Ok(grads)
}

fn add(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
