//! Full-precision LSTM cell and sequence pass, the numeric reference for
//! every quantized variant.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor::DenseTensor;

/// The four weight groups of a cell, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gate {
    /// Cell candidate `m_t` (tanh).
    Cell = 0,
    Forget = 1,
    Input = 2,
    Output = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Cell, Gate::Forget, Gate::Input, Gate::Output];

    pub fn name(self) -> &'static str {
        match self {
            Gate::Cell => "c",
            Gate::Forget => "f",
            Gate::Input => "i",
            Gate::Output => "o",
        }
    }
}

/// Forward weights `[N_h × N_x]`, recurrent weights `[N_h × N_h]`, bias `[N_h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub w_fwd: DenseTensor,
    pub w_rec: DenseTensor,
    pub bias: DenseTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    n_input: usize,
    n_hidden: usize,
    gates: [GateParams; 4],
}

impl LstmParams {
    pub fn new(n_input: usize, n_hidden: usize, gates: [GateParams; 4]) -> Result<Self> {
        ensure!(n_input > 0 && n_hidden > 0, Dimension, "LSTM sizes must be positive");
        for (g, p) in Gate::ALL.iter().zip(&gates) {
            ensure!(
                p.w_fwd.shape() == [n_hidden, n_input],
                Dimension,
                "W_{}^fwd has shape {:?}, expected [{n_hidden}, {n_input}]",
                g.name(),
                p.w_fwd.shape()
            );
            ensure!(
                p.w_rec.shape() == [n_hidden, n_hidden],
                Dimension,
                "W_{}^rec has shape {:?}, expected [{n_hidden}, {n_hidden}]",
                g.name(),
                p.w_rec.shape()
            );
            ensure!(
                p.bias.shape() == [n_hidden],
                Dimension,
                "b_{} has shape {:?}, expected [{n_hidden}]",
                g.name(),
                p.bias.shape()
            );
        }
        Ok(Self { n_input, n_hidden, gates })
    }

    pub fn zeros(n_input: usize, n_hidden: usize) -> Self {
        let gate = || GateParams {
            w_fwd: DenseTensor::zeros(vec![n_hidden, n_input]),
            w_rec: DenseTensor::zeros(vec![n_hidden, n_hidden]),
            bias: DenseTensor::zeros(vec![n_hidden]),
        };
        Self { n_input, n_hidden, gates: [gate(), gate(), gate(), gate()] }
    }

    /// Every weight and bias drawn from `uniform(-range, range)`.
    pub fn random<R: Rng>(n_input: usize, n_hidden: usize, range: f32, rng: &mut R) -> Self {
        let mut draw = |n: usize| -> Vec<f32> {
            (0..n).map(|_| rng.gen_range(-range..=range)).collect()
        };
        let mut gate = || GateParams {
            w_fwd: DenseTensor::matrix(n_hidden, n_input, draw(n_hidden * n_input)).unwrap(),
            w_rec: DenseTensor::matrix(n_hidden, n_hidden, draw(n_hidden * n_hidden)).unwrap(),
            bias: DenseTensor::vector(draw(n_hidden)).unwrap(),
        };
        Self { n_input, n_hidden, gates: [gate(), gate(), gate(), gate()] }
    }

    pub fn n_input(&self) -> usize {
        self.n_input
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn gate(&self, g: Gate) -> &GateParams {
        &self.gates[g as usize]
    }

    pub fn gate_mut(&mut self, g: Gate) -> &mut GateParams {
        &mut self.gates[g as usize]
    }

    pub fn gates(&self) -> &[GateParams; 4] {
        &self.gates
    }
}

/// Hidden and cell state, both `[N_h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: DenseTensor,
    pub c: DenseTensor,
}

impl LstmState {
    pub fn zeros(n_hidden: usize) -> Self {
        Self { h: DenseTensor::zeros(vec![n_hidden]), c: DenseTensor::zeros(vec![n_hidden]) }
    }

    pub fn new(h: DenseTensor, c: DenseTensor) -> Result<Self> {
        ensure!(
            h.shape().len() == 1 && h.shape() == c.shape(),
            Dimension,
            "state shapes {:?} / {:?}",
            h.shape(),
            c.shape()
        );
        Ok(Self { h, c })
    }
}

/// Which per-sequence vector feeds the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// `h_T`
    Final,
    /// Mean of `h_t` over all steps.
    #[default]
    TimeMean,
}

impl std::str::FromStr for FeatureSource {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" | "last" => Ok(Self::Final),
            "mean" | "time_mean" => Ok(Self::TimeMean),
            other => Err(crate::Error::Config(format!("unknown feature source `{other}`"))),
        }
    }
}

/// Linear readout `argmax(W·h + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub weights: DenseTensor,
    pub bias: DenseTensor,
    pub feature: FeatureSource,
}

impl ClassifierHead {
    pub fn new(weights: DenseTensor, bias: DenseTensor, feature: FeatureSource) -> Result<Self> {
        ensure!(weights.shape().len() == 2, Dimension, "head weights must be a matrix");
        ensure!(
            bias.shape() == [weights.shape()[0]],
            Dimension,
            "head bias {:?} does not match {} classes",
            bias.shape(),
            weights.shape()[0]
        );
        Ok(Self { weights, bias, feature })
    }

    pub fn n_classes(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn n_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn logits(&self, features: &[f32]) -> Result<Vec<f64>> {
        ensure!(
            features.len() == self.n_features(),
            Dimension,
            "head expects {} features, got {}",
            self.n_features(),
            features.len()
        );
        Ok((0..self.n_classes())
            .map(|j| {
                let dot: f64 = self
                    .weights
                    .row(j)
                    .iter()
                    .zip(features)
                    .map(|(&w, &x)| w as f64 * x as f64)
                    .sum();
                dot + self.bias.data()[j] as f64
            })
            .collect())
    }
}

/// `argmax(W·h + b)`; ties go to the lowest index.
pub fn classify(head: &ClassifierHead, features: &[f32]) -> Result<usize> {
    let logits = head.logits(features)?;
    Ok(argmax(&logits))
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[inline]
pub fn logistic_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Anything that advances an LSTM state by one input vector.
pub trait Cell: Sync {
    fn n_input(&self) -> usize;
    fn n_hidden(&self) -> usize;
    fn step(&self, x: &[f32], s: &LstmState) -> Result<LstmState>;
}

/// Gate pre-activations and resulting state of one step, in binary64.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTrace {
    /// Indexed by [`Gate`].
    pub pre: [Vec<f64>; 4],
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

impl CellTrace {
    pub fn gate_value(&self, g: Gate, j: usize) -> f64 {
        match g {
            Gate::Cell => self.pre[0][j].tanh(),
            _ => logistic_sigmoid(self.pre[g as usize][j]),
        }
    }

    pub fn into_state(self) -> LstmState {
        let n = self.h.len();
        LstmState {
            h: DenseTensor::from_f64(vec![n], &self.h).expect("finite state"),
            c: DenseTensor::from_f64(vec![n], &self.c).expect("finite state"),
        }
    }
}

/// Applies the gate nonlinearities and the state update to pre-activations.
pub(crate) fn finish_step(pre: [Vec<f64>; 4], c_prev: &[f32]) -> CellTrace {
    let n = c_prev.len();
    let mut c = Vec::with_capacity(n);
    let mut h = Vec::with_capacity(n);
    for j in 0..n {
        let m = pre[0][j].tanh();
        let f = logistic_sigmoid(pre[1][j]);
        let i = logistic_sigmoid(pre[2][j]);
        let o = logistic_sigmoid(pre[3][j]);
        let cj = f * c_prev[j] as f64 + i * m;
        c.push(cj);
        h.push(o * cj.tanh());
    }
    CellTrace { pre, c, h }
}

pub(crate) fn check_step_shapes(n_input: usize, n_hidden: usize, x: &[f32], s: &LstmState) -> Result<()> {
    ensure!(x.len() == n_input, Dimension, "input has {} features, cell expects {n_input}", x.len());
    ensure!(
        s.h.len() == n_hidden && s.c.len() == n_hidden,
        Dimension,
        "state sizes {}/{} do not match N_h={n_hidden}",
        s.h.len(),
        s.c.len()
    );
    Ok(())
}

fn row_dot(row: &[f32], v: &[f32]) -> f64 {
    row.iter().zip(v).map(|(&w, &x)| w as f64 * x as f64).sum()
}

/// One full-precision step with its binary64 trace.
pub fn lstm_cell_trace(p: &LstmParams, x: &[f32], s: &LstmState) -> Result<CellTrace> {
    check_step_shapes(p.n_input, p.n_hidden, x, s)?;
    let h = s.h.data();
    let pre = Gate::ALL.map(|g| {
        let gp = p.gate(g);
        (0..p.n_hidden)
            .map(|j| {
                let fwd = row_dot(gp.w_fwd.row(j), x);
                let rec = row_dot(gp.w_rec.row(j), h);
                fwd + rec + gp.bias.data()[j] as f64
            })
            .collect()
    });
    Ok(finish_step(pre, s.c.data()))
}

/// One full-precision step. The input state is left untouched.
pub fn lstm_cell_fp(p: &LstmParams, x: &DenseTensor, s: &LstmState) -> Result<LstmState> {
    Ok(lstm_cell_trace(p, x.data(), s)?.into_state())
}

impl Cell for LstmParams {
    fn n_input(&self) -> usize {
        self.n_input
    }

    fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    fn step(&self, x: &[f32], s: &LstmState) -> Result<LstmState> {
        Ok(lstm_cell_trace(self, x, s)?.into_state())
    }
}

/// Runs `cell` over a `[T × N_x]` sequence and returns every `h_t` as `[T × N_h]`.
/// `s0` defaults to the zero state.
pub fn run_sequence<C: Cell + ?Sized>(
    cell: &C,
    seq: &DenseTensor,
    s0: Option<&LstmState>,
) -> Result<DenseTensor> {
    let nx = cell.n_input();
    ensure!(
        seq.shape().len() == 2 && seq.shape()[1] == nx,
        Dimension,
        "sequence shape {:?} does not match N_x={nx}",
        seq.shape()
    );
    let t_len = seq.shape()[0];
    ensure!(t_len >= 1, Dimension, "sequence must have at least one step");
    let nh = cell.n_hidden();
    let mut s = s0.cloned().unwrap_or_else(|| LstmState::zeros(nh));
    let mut out = Vec::with_capacity(t_len * nh);
    for t in 0..t_len {
        s = cell.step(seq.row(t), &s)?;
        out.extend_from_slice(s.h.data());
    }
    DenseTensor::matrix(t_len, nh, out)
}

pub fn lstm_forward_fp(p: &LstmParams, seq: &DenseTensor, s0: Option<&LstmState>) -> Result<DenseTensor> {
    run_sequence(p, seq, s0)
}

/// Feature vector for one flattened `[T × N_x]` sequence, starting from the
/// zero state.
pub fn sequence_features<C: Cell + ?Sized>(
    cell: &C,
    seq: &[f32],
    source: FeatureSource,
) -> Result<Vec<f32>> {
    let nx = cell.n_input();
    ensure!(
        !seq.is_empty() && seq.len() % nx == 0,
        Dimension,
        "sequence of {} values is not a whole number of {nx}-wide steps",
        seq.len()
    );
    let nh = cell.n_hidden();
    let steps = seq.len() / nx;
    let mut s = LstmState::zeros(nh);
    let mut sum = vec![0f64; nh];
    for x in seq.chunks_exact(nx) {
        s = cell.step(x, &s)?;
        for (acc, &h) in sum.iter_mut().zip(s.h.data()) {
            *acc += h as f64;
        }
    }
    Ok(match source {
        FeatureSource::Final => s.h.into_data(),
        FeatureSource::TimeMean => sum.iter().map(|&v| (v / steps as f64) as f32).collect(),
    })
}
