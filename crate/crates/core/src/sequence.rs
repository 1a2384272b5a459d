//! Single-layer LSTM over a trajectory's point embeddings; the hidden state
//! at the last real timestep represents the trajectory.

use crate::error::ModelError;
use crate::params::LstmParams;
use crate::tensor::{axpy, dot, sigmoid, Mat};

/// Sequences padded to a common length, row-major `batch × t_max × d`.
/// Positions beyond a sequence's length are zero and never read.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    data: Vec<f64>,
    lengths: Vec<usize>,
    t_max: usize,
    dim: usize,
}

impl PaddedBatch {
    /// Packs `T_b × d` sequences; every sequence needs at least one step.
    pub fn from_sequences(seqs: &[Mat]) -> Result<Self, ModelError> {
        let dim = seqs.first().map_or(0, Mat::cols);
        let t_max = seqs.iter().map(Mat::rows).max().unwrap_or(0);
        let mut data = vec![0.0; seqs.len() * t_max * dim];
        let mut lengths = Vec::with_capacity(seqs.len());
        for (b, s) in seqs.iter().enumerate() {
            if s.rows() == 0 {
                return Err(ModelError::Shape(format!("sequence {b} is empty")));
            }
            if s.cols() != dim {
                return Err(ModelError::Shape(format!(
                    "sequence {b} has width {}, expected {dim}",
                    s.cols()
                )));
            }
            let start = b * t_max * dim;
            data[start..start + s.len()].copy_from_slice(s.data());
            lengths.push(s.rows());
        }
        Ok(Self {
            data,
            lengths,
            t_max,
            dim,
        })
    }

    /// Extends every sequence with zero padding up to `t_max` steps.
    pub fn with_padding(&self, t_max: usize) -> Self {
        assert!(t_max >= self.t_max);
        let mut data = vec![0.0; self.lengths.len() * t_max * self.dim];
        for b in 0..self.lengths.len() {
            let src = &self.data[b * self.t_max * self.dim..(b + 1) * self.t_max * self.dim];
            data[b * t_max * self.dim..b * t_max * self.dim + src.len()].copy_from_slice(src);
        }
        Self {
            data,
            lengths: self.lengths.clone(),
            t_max,
            dim: self.dim,
        }
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    #[inline]
    pub fn step(&self, b: usize, t: usize) -> &[f64] {
        let start = (b * self.t_max + t) * self.dim;
        &self.data[start..start + self.dim]
    }
}

/// Activated gates `[i, f, g, o]` and the new cell/hidden state of one step.
#[derive(Clone, Debug)]
struct StepState {
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

fn cell_step(p: &LstmParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepState {
    let hd = p.hidden();
    let mut gates = vec![0.0; 4 * hd];
    for (r, g) in gates.iter_mut().enumerate() {
        let pre = p.bias.data()[r] + dot(p.w_input.row(r), x) + dot(p.w_hidden.row(r), h_prev);
        *g = if (2 * hd..3 * hd).contains(&r) {
            pre.tanh()
        } else {
            sigmoid(pre)
        };
    }
    let mut c = vec![0.0; hd];
    let mut h = vec![0.0; hd];
    for k in 0..hd {
        let (i, f, g, o) = (
            gates[k],
            gates[hd + k],
            gates[2 * hd + k],
            gates[3 * hd + k],
        );
        c[k] = f * c_prev[k] + i * g;
        h[k] = o * c[k].tanh();
    }
    StepState { gates, c, h }
}

/// Forward record of one sequence, kept for backpropagation through time.
#[derive(Clone, Debug)]
pub struct LstmTrace {
    steps: Vec<StepState>,
}

impl LstmTrace {
    pub fn final_hidden(&self) -> &[f64] {
        &self.steps.last().expect("non-empty sequence").h
    }
}

/// Runs one unpadded `T × d` sequence from a zero state.
pub fn lstm_forward(p: &LstmParams, xs: &Mat) -> Result<LstmTrace, ModelError> {
    let hd = p.hidden();
    let zero = vec![0.0; hd];
    let mut steps: Vec<StepState> = Vec::with_capacity(xs.rows());
    for t in 0..xs.rows() {
        let (h_prev, c_prev) = match steps.last() {
            Some(s) => (s.h.as_slice(), s.c.as_slice()),
            None => (zero.as_slice(), zero.as_slice()),
        };
        let st = cell_step(p, xs.row(t), h_prev, c_prev);
        if !st.h.iter().chain(&st.c).all(|v| v.is_finite()) {
            return Err(ModelError::NonFiniteLstm { batch: 0, step: t });
        }
        steps.push(st);
    }
    if steps.is_empty() {
        return Err(ModelError::Shape("empty sequence".into()));
    }
    Ok(LstmTrace { steps })
}

/// Final real-step hidden state of every sequence in a padded batch (`batch × d`).
pub fn lstm_final(batch: &PaddedBatch, p: &LstmParams) -> Result<Mat, ModelError> {
    let hd = p.hidden();
    let n = batch.lengths.len();
    if n > 0 && batch.dim != p.w_input.cols() {
        return Err(ModelError::Shape(format!(
            "batch width {} vs LSTM input width {}",
            batch.dim,
            p.w_input.cols()
        )));
    }
    let mut h = vec![vec![0.0; hd]; n];
    let mut c = vec![vec![0.0; hd]; n];
    for t in 0..batch.t_max {
        for b in 0..n {
            if t >= batch.lengths[b] {
                continue;
            }
            let st = cell_step(p, batch.step(b, t), &h[b], &c[b]);
            if !st.h.iter().chain(&st.c).all(|v| v.is_finite()) {
                return Err(ModelError::NonFiniteLstm { batch: b, step: t });
            }
            h[b] = st.h;
            c[b] = st.c;
        }
    }
    let mut out = Mat::zeros(n, hd);
    for (b, hb) in h.iter().enumerate() {
        out.row_mut(b).copy_from_slice(hb);
    }
    Ok(out)
}

/// Backpropagation through time from a gradient on the final hidden state.
///
/// Parameter gradients are accumulated into `grads`; the returned matrix is
/// the gradient w.r.t. the `T × d` inputs.
pub fn lstm_backward(
    p: &LstmParams,
    xs: &Mat,
    trace: &LstmTrace,
    d_final: &[f64],
    grads: &mut LstmParams,
) -> Mat {
    let hd = p.hidden();
    let zero = vec![0.0; hd];
    let mut dxs = Mat::zeros(xs.rows(), xs.cols());
    let mut dh = d_final.to_vec();
    let mut dc = vec![0.0; hd];
    let mut dpre = vec![0.0; 4 * hd];
    for t in (0..trace.steps.len()).rev() {
        let st = &trace.steps[t];
        let (h_prev, c_prev) = if t == 0 {
            (zero.as_slice(), zero.as_slice())
        } else {
            (
                trace.steps[t - 1].h.as_slice(),
                trace.steps[t - 1].c.as_slice(),
            )
        };
        for k in 0..hd {
            let (i, f, g, o) = (
                st.gates[k],
                st.gates[hd + k],
                st.gates[2 * hd + k],
                st.gates[3 * hd + k],
            );
            let tc = st.c[k].tanh();
            let d_o = dh[k] * tc;
            let dck = dc[k] + dh[k] * o * (1.0 - tc * tc);
            dpre[k] = dck * g * i * (1.0 - i);
            dpre[hd + k] = dck * c_prev[k] * f * (1.0 - f);
            dpre[2 * hd + k] = dck * i * (1.0 - g * g);
            dpre[3 * hd + k] = d_o * o * (1.0 - o);
            dc[k] = dck * f;
        }
        axpy(1.0, &dpre, grads.bias.data_mut());
        dh.iter_mut().for_each(|v| *v = 0.0);
        let x = xs.row(t);
        let dx = dxs.row_mut(t);
        for (r, &g) in dpre.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            axpy(g, x, grads.w_input.row_mut(r));
            axpy(g, h_prev, grads.w_hidden.row_mut(r));
            axpy(g, p.w_input.row(r), dx);
            axpy(g, p.w_hidden.row(r), &mut dh);
        }
    }
    dxs
}
