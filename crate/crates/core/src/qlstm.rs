//! LSTM inference with multi-level binarized weights and inputs.
//!
//! Weights and biases are quantized once, per parameter group; `x_t` and
//! `h_{t-1}` are quantized on the fly with the input group's settings. Gate
//! nonlinearities, the cell state and the elementwise products stay in full
//! precision.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::kernels::{DotPath, PreparedMatrix};
use crate::kv::KeyValues;
use crate::lstm::{check_step_shapes, finish_step, Cell, CellTrace, Gate, LstmParams, LstmState};
use crate::quant::{
    best_alpha_exp, fixed_point_codes, fixed_point_codes_at, fixed_point_scale_exp, pow2, quantize_tensor, suggest_alpha, MultiLevelTensor,
};
use crate::tensor::DenseTensor;

pub const MIN_LEVELS: u32 = 1;
pub const MAX_CONFIG_LEVELS: u32 = 8;
pub const MIN_ALPHA_EXP: i32 = -15;
pub const MAX_ALPHA_EXP: i32 = 4;

/// Scaling-factor group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    /// Inputs `x_t` (and the recurrent activation `h_{t-1}`).
    X,
    Wfwd,
    Wrec,
    B,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::X, Group::Wfwd, Group::Wrec, Group::B];

    pub fn key(self) -> &'static str {
        match self {
            Group::X => "x",
            Group::Wfwd => "wfwd",
            Group::Wrec => "wrec",
            Group::B => "b",
        }
    }
}

impl std::str::FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" | "input" => Ok(Group::X),
            "wfwd" | "wf" => Ok(Group::Wfwd),
            "wrec" | "wr" => Ok(Group::Wrec),
            "b" | "bias" => Ok(Group::B),
            other => Err(Error::Config(format!("unknown group `{other}`"))),
        }
    }
}

/// Level count and scale exponent (`α = 2^alpha_exp`) of one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupConfig {
    pub levels: u32,
    pub alpha_exp: i32,
}

impl GroupConfig {
    pub const fn new(levels: u32, alpha_exp: i32) -> Self {
        Self { levels, alpha_exp }
    }

    pub fn alpha(self) -> f64 {
        pow2(self.alpha_exp)
    }

    /// Largest residual for values within `[-2α, 2α]`: `α · 2^(1-n)`.
    pub fn residual_bound(self) -> f64 {
        pow2(self.alpha_exp + 1 - self.levels as i32)
    }

    pub fn validate(self, group: Group) -> Result<()> {
        ensure!(
            (MIN_LEVELS..=MAX_CONFIG_LEVELS).contains(&self.levels),
            Config,
            "{}: levels {} outside [{MIN_LEVELS}, {MAX_CONFIG_LEVELS}]",
            group.key(),
            self.levels
        );
        ensure!(
            (MIN_ALPHA_EXP..=MAX_ALPHA_EXP).contains(&self.alpha_exp),
            Config,
            "{}: alpha exponent {} outside [{MIN_ALPHA_EXP}, {MAX_ALPHA_EXP}]",
            group.key(),
            self.alpha_exp
        );
        Ok(())
    }
}

impl fmt::Display for GroupConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.levels, self.alpha_exp)
    }
}

impl std::str::FromStr for GroupConfig {
    type Err = Error;

    /// `levels:alpha_exp`, e.g. `5:-2`.
    fn from_str(s: &str) -> Result<Self> {
        let (n, k) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("expected `levels:alpha_exp`, got `{s}`")))?;
        let levels = n.trim().parse().map_err(|_| Error::Config(format!("bad level count `{n}`")))?;
        let alpha_exp = k.trim().parse().map_err(|_| Error::Config(format!("bad exponent `{k}`")))?;
        Ok(Self { levels, alpha_exp })
    }
}

/// Per-group quantization settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub x: GroupConfig,
    pub wfwd: GroupConfig,
    pub wrec: GroupConfig,
    pub b: GroupConfig,
}

impl ScalingConfig {
    pub fn uniform(levels: u32, alpha_exp: i32) -> Self {
        let g = GroupConfig::new(levels, alpha_exp);
        Self { x: g, wfwd: g, wrec: g, b: g }
    }

    pub fn get(&self, group: Group) -> GroupConfig {
        match group {
            Group::X => self.x,
            Group::Wfwd => self.wfwd,
            Group::Wrec => self.wrec,
            Group::B => self.b,
        }
    }

    pub fn set(&mut self, group: Group, cfg: GroupConfig) {
        match group {
            Group::X => self.x = cfg,
            Group::Wfwd => self.wfwd = cfg,
            Group::Wrec => self.wrec = cfg,
            Group::B => self.b = cfg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Group::ALL.iter().try_for_each(|&g| self.get(g).validate(g))
    }

    /// Reads `<group>.levels` / `<group>.alpha_exp` keys, filling gaps
    /// from `base`.
    pub fn from_kv(kv: &KeyValues, base: Option<ScalingConfig>) -> Result<Self> {
        let mut cfg = base;
        for g in Group::ALL {
            let levels = kv.parsed::<u32>(&format!("{}.levels", g.key()))?;
            let alpha = kv.parsed::<i32>(&format!("{}.alpha_exp", g.key()))?;
            let current = cfg.map(|c| c.get(g));
            let merged = match (levels, alpha, current) {
                (Some(n), Some(k), _) => GroupConfig::new(n, k),
                (Some(n), None, Some(c)) => GroupConfig::new(n, c.alpha_exp),
                (None, Some(k), Some(c)) => GroupConfig::new(c.levels, k),
                (None, None, Some(c)) => c,
                _ => {
                    return Err(Error::Config(format!(
                        "group `{}` needs both `levels` and `alpha_exp`",
                        g.key()
                    )))
                }
            };
            let c = cfg.get_or_insert(Self::uniform(merged.levels, merged.alpha_exp));
            c.set(g, merged);
        }
        let cfg = cfg.expect("all groups filled");
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        for g in Group::ALL {
            let c = self.get(g);
            kv.set(format!("{}.levels", g.key()), c.levels.to_string());
            kv.set(format!("{}.alpha_exp", g.key()), c.alpha_exp.to_string());
        }
        kv
    }
}

impl fmt::Display for ScalingConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "X={} Wfwd={} Wrec={} B={}", self.x, self.wfwd, self.wrec, self.b)
    }
}

/// One gate's quantized tensors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedGate {
    pub w_fwd: MultiLevelTensor,
    pub w_rec: MultiLevelTensor,
    pub bias: MultiLevelTensor,
}

#[derive(Debug, Clone)]
struct PreparedGate {
    fwd: PreparedMatrix,
    rec: PreparedMatrix,
    bias: Vec<f64>,
}

/// Quantized LSTM parameters plus the input-group settings used to quantize
/// `x_t` and `h_{t-1}` at run time.
#[derive(Debug, Clone)]
pub struct QuantizedLstmParams {
    n_input: usize,
    n_hidden: usize,
    config: ScalingConfig,
    gates: [QuantizedGate; 4],
    path: DotPath,
    prepared: Vec<PreparedGate>,
}

impl PartialEq for QuantizedLstmParams {
    fn eq(&self, other: &Self) -> bool {
        self.n_input == other.n_input
            && self.n_hidden == other.n_hidden
            && self.config == other.config
            && self.gates == other.gates
    }
}

fn check_group(t: &MultiLevelTensor, cfg: GroupConfig, what: &str) -> Result<()> {
    if t.levels() != cfg.levels || t.alpha_exp() != cfg.alpha_exp {
        return Err(Error::Structure(format!(
            "{what} is quantized at {}:{} but its group is configured {cfg}",
            t.levels(),
            t.alpha_exp()
        )));
    }
    Ok(())
}

impl QuantizedLstmParams {
    /// Assembles already-quantized tensors, checking shapes and that every
    /// tensor matches its group's settings.
    pub fn from_parts(
        n_input: usize,
        n_hidden: usize,
        config: ScalingConfig,
        gates: [QuantizedGate; 4],
    ) -> Result<Self> {
        config.validate()?;
        for (g, q) in Gate::ALL.iter().zip(&gates) {
            let name = g.name();
            ensure!(q.w_fwd.shape() == [n_hidden, n_input], Dimension, "W_{name}^fwd shape {:?}", q.w_fwd.shape());
            ensure!(q.w_rec.shape() == [n_hidden, n_hidden], Dimension, "W_{name}^rec shape {:?}", q.w_rec.shape());
            ensure!(q.bias.shape() == [n_hidden], Dimension, "b_{name} shape {:?}", q.bias.shape());
            check_group(&q.w_fwd, config.wfwd, &format!("W_{name}^fwd"))?;
            check_group(&q.w_rec, config.wrec, &format!("W_{name}^rec"))?;
            check_group(&q.bias, config.b, &format!("b_{name}"))?;
        }
        let prepared = gates
            .iter()
            .map(|q| {
                Ok(PreparedGate {
                    fwd: PreparedMatrix::new(&q.w_fwd)?,
                    rec: PreparedMatrix::new(&q.w_rec)?,
                    bias: q.bias.dequantize(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { n_input, n_hidden, config, gates, path: DotPath::default(), prepared })
    }

    pub fn with_path(mut self, path: DotPath) -> Self {
        self.path = path;
        self
    }

    pub fn path(&self) -> DotPath {
        self.path
    }

    pub fn config(&self) -> &ScalingConfig {
        &self.config
    }

    pub fn gate(&self, g: Gate) -> &QuantizedGate {
        &self.gates[g as usize]
    }

    pub fn gates(&self) -> &[QuantizedGate; 4] {
        &self.gates
    }

    /// Full-precision parameters holding the reconstructed values.
    pub fn dequantize(&self) -> Result<LstmParams> {
        let gates = self.gates.clone().map(|q| {
            Ok(crate::lstm::GateParams {
                w_fwd: q.w_fwd.to_dense()?,
                w_rec: q.w_rec.to_dense()?,
                bias: q.bias.to_dense()?,
            })
        });
        let [a, b, c, d] = gates;
        LstmParams::new(self.n_input, self.n_hidden, [a?, b?, c?, d?])
    }
}

/// Quantizes every weight and bias with its group's settings.
pub fn quantize_lstm(p: &LstmParams, cfg: &ScalingConfig) -> Result<QuantizedLstmParams> {
    cfg.validate()?;
    let q = |t: &DenseTensor, g: GroupConfig| quantize_tensor(t, g.levels, g.alpha_exp);
    let mut gates = Vec::with_capacity(4);
    for gp in p.gates() {
        gates.push(QuantizedGate {
            w_fwd: q(&gp.w_fwd, cfg.wfwd)?,
            w_rec: q(&gp.w_rec, cfg.wrec)?,
            bias: q(&gp.bias, cfg.b)?,
        });
    }
    let gates: [QuantizedGate; 4] = gates.try_into().expect("four gates");
    QuantizedLstmParams::from_parts(p.n_input(), p.n_hidden(), *cfg, gates)
}

/// Reconstruction error of one parameter group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualStats {
    pub count: usize,
    pub max_abs: f64,
    pub rms: f64,
}

/// Per-group `w - ŵ` statistics for the weight and bias groups of `q`
/// against the parameters `p` it was quantized from.
pub fn residual_stats(p: &LstmParams, q: &QuantizedLstmParams) -> Result<[(Group, ResidualStats); 3]> {
    ensure!(
        p.n_input() == q.n_input && p.n_hidden() == q.n_hidden,
        Dimension,
        "parameters and quantized model differ in shape"
    );
    let d = q.dequantize()?;
    let stats = |f: fn(&crate::lstm::GateParams) -> &DenseTensor| -> ResidualStats {
        let (mut count, mut max_abs, mut sq) = (0usize, 0f64, 0f64);
        for (a, b) in p.gates().iter().zip(d.gates()) {
            for (&x, &y) in f(a).data().iter().zip(f(b).data()) {
                let r = (x as f64 - y as f64).abs();
                count += 1;
                max_abs = max_abs.max(r);
                sq += r * r;
            }
        }
        let rms = if count == 0 { 0.0 } else { (sq / count as f64).sqrt() };
        ResidualStats { count, max_abs, rms }
    };
    Ok([
        (Group::Wfwd, stats(|g| &g.w_fwd)),
        (Group::Wrec, stats(|g| &g.w_rec)),
        (Group::B, stats(|g| &g.bias)),
    ])
}

/// One quantized step with its binary64 trace.
pub fn lstm_cell_ml_trace(q: &QuantizedLstmParams, x: &[f32], s: &LstmState) -> Result<CellTrace> {
    check_step_shapes(q.n_input, q.n_hidden, x, s)?;
    let xc = q.config.x;
    let xq = MultiLevelTensor::quantize_f32(x, xc.levels, xc.alpha_exp)?;
    let hq = MultiLevelTensor::quantize_f32(s.h.data(), xc.levels, xc.alpha_exp)?;
    let mut pre: [Vec<f64>; 4] = Default::default();
    for (slot, g) in pre.iter_mut().zip(&q.prepared) {
        let fwd = g.fwd.matvec(&xq, None, q.path)?;
        let rec = g.rec.matvec(&hq, None, q.path)?;
        *slot = fwd.iter().zip(&rec).zip(&g.bias).map(|((a, b), c)| a + b + c).collect();
    }
    Ok(finish_step(pre, s.c.data()))
}

pub fn lstm_cell_ml(q: &QuantizedLstmParams, x: &DenseTensor, s: &LstmState) -> Result<LstmState> {
    Ok(lstm_cell_ml_trace(q, x.data(), s)?.into_state())
}

impl Cell for QuantizedLstmParams {
    fn n_input(&self) -> usize {
        self.n_input
    }

    fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    fn step(&self, x: &[f32], s: &LstmState) -> Result<LstmState> {
        Ok(lstm_cell_ml_trace(self, x, s)?.into_state())
    }
}

pub fn lstm_forward_ml(
    q: &QuantizedLstmParams,
    seq: &DenseTensor,
    s0: Option<&LstmState>,
) -> Result<DenseTensor> {
    crate::lstm::run_sequence(q, seq, s0)
}

fn clamp_exp(k: i32) -> i32 {
    k.clamp(MIN_ALPHA_EXP, MAX_ALPHA_EXP)
}

/// Among the suggested exponents for `values` (restricted to the valid
/// config range), the one with the least squared quantization error.
pub fn calibrate_group(values: &[f64], levels: u32) -> Result<GroupConfig> {
    let mut candidates: Vec<i32> = suggest_alpha(values)?.into_iter().map(clamp_exp).collect();
    candidates.dedup();
    Ok(GroupConfig::new(levels, best_alpha_exp(values, levels, &candidates)?))
}

/// Values that flow through the input group: the given input steps and the
/// hidden states the full-precision model produces on them.
pub fn activation_samples(p: &LstmParams, sequences: &[&[f32]]) -> Result<Vec<f64>> {
    let nx = p.n_input();
    let mut out = Vec::new();
    for seq in sequences {
        ensure!(seq.len() % nx == 0, Dimension, "calibration sequence is not a whole number of steps");
        let mut s = LstmState::zeros(p.n_hidden());
        for x in seq.chunks_exact(nx) {
            out.extend(x.iter().map(|&v| v as f64));
            out.extend(s.h.data().iter().map(|&v| v as f64));
            s = p.step(x, &s)?;
        }
    }
    Ok(out)
}

/// Chooses each group's exponent by minimum squared error: weights and
/// biases from the parameters, the input group from activations seen on
/// `calibration` sequences. Biases use the weight level count.
pub fn calibrate_config(
    p: &LstmParams,
    calibration: &[&[f32]],
    x_levels: u32,
    w_levels: u32,
) -> Result<ScalingConfig> {
    let collect = |f: fn(&crate::lstm::GateParams) -> &DenseTensor| -> Vec<f64> {
        p.gates().iter().flat_map(|g| f(g).data().iter().map(|&v| v as f64)).collect()
    };
    let acts = activation_samples(p, calibration)?;
    ensure!(!acts.is_empty(), Validation, "no calibration data");
    let cfg = ScalingConfig {
        x: calibrate_group(&acts, x_levels)?,
        wfwd: calibrate_group(&collect(|g| &g.w_fwd), w_levels)?,
        wrec: calibrate_group(&collect(|g| &g.w_rec), w_levels)?,
        b: calibrate_group(&collect(|g| &g.bias), w_levels)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Conventional fixed-point baseline: every weight and bias tensor stored as
/// a `weight_bits` two's-complement word with its own power-of-two scale;
/// `x_t` and `h_{t-1}` quantized to `input_bits` at one static scale shared
/// by both. Everything else runs in full precision.
#[derive(Debug, Clone)]
pub struct FixedPointLstm {
    n_input: usize,
    n_hidden: usize,
    input_bits: u32,
    weight_bits: u32,
    activation_scale_exp: i32,
    /// Dequantized `[fwd, rec, bias]` per gate, row-major.
    gates: Vec<[Vec<f64>; 3]>,
}

impl FixedPointLstm {
    pub fn new(p: &LstmParams, input_bits: u32, weight_bits: u32, activation_scale_exp: i32) -> Result<Self> {
        ensure!((1..=16).contains(&input_bits), Config, "input width {input_bits} outside 1..=16");
        let deq = |t: &DenseTensor| -> Result<Vec<f64>> {
            let v: Vec<f64> = t.data().iter().map(|&x| x as f64).collect();
            let (k, codes) = fixed_point_codes(&v, weight_bits)?;
            Ok(codes.iter().map(|&c| c as f64 * pow2(k)).collect())
        };
        let gates = p
            .gates()
            .iter()
            .map(|g| Ok([deq(&g.w_fwd)?, deq(&g.w_rec)?, deq(&g.bias)?]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_input: p.n_input(),
            n_hidden: p.n_hidden(),
            input_bits,
            weight_bits,
            activation_scale_exp,
            gates,
        })
    }

    /// Activation scale from the largest magnitude seen on `calibration`
    /// sequences (inputs and full-precision hidden states).
    pub fn calibrated(p: &LstmParams, calibration: &[&[f32]], input_bits: u32, weight_bits: u32) -> Result<Self> {
        ensure!((1..=16).contains(&input_bits), Config, "input width {input_bits} outside 1..=16");
        let acts = activation_samples(p, calibration)?;
        ensure!(!acts.is_empty(), Validation, "no calibration data");
        let max = acts.iter().fold(0f64, |m, v| m.max(v.abs()));
        Self::new(p, input_bits, weight_bits, fixed_point_scale_exp(max, input_bits))
    }

    pub fn bits(&self) -> (u32, u32) {
        (self.input_bits, self.weight_bits)
    }

    pub fn activation_scale_exp(&self) -> i32 {
        self.activation_scale_exp
    }

    fn quantize_activation(&self, v: &[f32]) -> Result<Vec<f64>> {
        let v: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        let k = self.activation_scale_exp;
        Ok(fixed_point_codes_at(&v, self.input_bits, k)?.iter().map(|&c| c as f64 * pow2(k)).collect())
    }

    pub fn trace(&self, x: &[f32], s: &LstmState) -> Result<CellTrace> {
        check_step_shapes(self.n_input, self.n_hidden, x, s)?;
        let xq = self.quantize_activation(x)?;
        let hq = self.quantize_activation(s.h.data())?;
        let (nx, nh) = (self.n_input, self.n_hidden);
        let dot = |w: &[f64], v: &[f64]| w.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        let mut pre: [Vec<f64>; 4] = Default::default();
        for (slot, [fwd, rec, bias]) in pre.iter_mut().zip(&self.gates) {
            *slot = (0..nh)
                .map(|j| dot(&fwd[j * nx..(j + 1) * nx], &xq) + dot(&rec[j * nh..(j + 1) * nh], &hq) + bias[j])
                .collect();
        }
        Ok(finish_step(pre, s.c.data()))
    }
}

impl Cell for FixedPointLstm {
    fn n_input(&self) -> usize {
        self.n_input
    }

    fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    fn step(&self, x: &[f32], s: &LstmState) -> Result<LstmState> {
        Ok(self.trace(x, s)?.into_state())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::{lstm_cell_trace, lstm_forward_fp, logistic_sigmoid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(seed: u64, nx: usize, nh: usize) -> LstmParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LstmParams::random(nx, nh, 0.5, &mut rng)
    }

    fn table2_55() -> ScalingConfig {
        ScalingConfig {
            x: GroupConfig::new(5, -1),
            wfwd: GroupConfig::new(5, -2),
            wrec: GroupConfig::new(5, -3),
            b: GroupConfig::new(5, -1),
        }
    }

    #[test]
    fn config_validation() {
        assert!(table2_55().validate().is_ok());
        assert!(ScalingConfig::uniform(0, 0).validate().is_err());
        assert!(ScalingConfig::uniform(9, 0).validate().is_err());
        assert!(ScalingConfig::uniform(3, 5).validate().is_err());
        assert!(ScalingConfig::uniform(3, -16).validate().is_err());
        let p = random_model(1, 3, 4);
        assert!(matches!(quantize_lstm(&p, &ScalingConfig::uniform(3, 7)), Err(Error::Config(_))));
    }

    #[test]
    fn config_kv_round_trip() {
        let cfg = table2_55();
        let text = cfg.to_kv().to_text();
        let back = ScalingConfig::from_kv(&KeyValues::parse(&text).unwrap(), None).unwrap();
        assert_eq!(back, cfg);
        let partial = KeyValues::parse("x.levels = 2\nb.alpha_exp = -4").unwrap();
        let merged = ScalingConfig::from_kv(&partial, Some(cfg)).unwrap();
        assert_eq!(merged.x, GroupConfig::new(2, -1));
        assert_eq!(merged.b, GroupConfig::new(5, -4));
        assert!(ScalingConfig::from_kv(&partial, None).is_err());
        assert_eq!("5:-2".parse::<GroupConfig>().unwrap(), GroupConfig::new(5, -2));
    }

    #[test]
    fn quantize_is_deterministic_and_group_consistent() {
        let p = random_model(2, 5, 6);
        let cfg = table2_55();
        let a = quantize_lstm(&p, &cfg).unwrap();
        let b = quantize_lstm(&p, &cfg).unwrap();
        assert_eq!(a, b);
        for g in Gate::ALL {
            assert_eq!(a.gate(g).w_fwd.levels(), 5);
            assert_eq!(a.gate(g).w_fwd.alpha_exp(), -2);
            assert_eq!(a.gate(g).w_rec.alpha_exp(), -3);
            assert_eq!(a.gate(g).bias.alpha_exp(), -1);
        }
        let mut gates = a.gates().clone();
        gates[2].w_rec = quantize_tensor(&p.gate(Gate::Input).w_rec, 4, -3).unwrap();
        assert!(matches!(
            QuantizedLstmParams::from_parts(5, 6, cfg, gates),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn one_level_is_plain_binarization() {
        let p = random_model(3, 4, 3);
        let q = quantize_lstm(&p, &ScalingConfig::uniform(1, -2)).unwrap();
        for g in Gate::ALL {
            for v in q.gate(g).w_fwd.dequantize() {
                assert_eq!(v.abs(), 0.25);
            }
        }
    }

    /// Hand-coded binary LSTM on a 2x2 instance: every operand is ±α.
    #[test]
    fn one_level_matches_hand_binary_lstm() {
        let p = random_model(4, 2, 2);
        let cfg = ScalingConfig {
            x: GroupConfig::new(1, -1),
            wfwd: GroupConfig::new(1, -2),
            wrec: GroupConfig::new(1, -3),
            b: GroupConfig::new(1, -4),
        };
        let q = quantize_lstm(&p, &cfg).unwrap();
        let sgn = |v: f32| if v >= 0.0 { 1.0 } else { -1.0 };
        let seq = [[0.3f32, -0.8], [-0.1, 0.0], [1.2, 0.4]];
        let (mut h, mut c) = ([0f64; 2], [0f64; 2]);
        let mut s = LstmState::zeros(2);
        for x in &seq {
            let mut pre = [[0f64; 2]; 4];
            for (gi, g) in Gate::ALL.iter().enumerate() {
                let gp = p.gate(*g);
                for j in 0..2 {
                    let mut acc = 0.0;
                    for k in 0..2 {
                        acc += sgn(gp.w_fwd.row(j)[k]) * 0.25 * sgn(x[k]) * 0.5;
                    }
                    for k in 0..2 {
                        acc += sgn(gp.w_rec.row(j)[k]) * 0.125 * sgn(h[k] as f32) * 0.5;
                    }
                    acc += sgn(gp.bias.data()[j]) * 0.0625;
                    pre[gi][j] = acc;
                }
            }
            for j in 0..2 {
                let m = pre[0][j].tanh();
                let f = logistic_sigmoid(pre[1][j]);
                let i = logistic_sigmoid(pre[2][j]);
                let o = logistic_sigmoid(pre[3][j]);
                c[j] = f * c[j] + i * m;
                h[j] = o * c[j].tanh();
                // state is carried in binary32
                c[j] = c[j] as f32 as f64;
                h[j] = h[j] as f32 as f64;
            }
            s = lstm_cell_ml(&q, &DenseTensor::vector(x.to_vec()).unwrap(), &s).unwrap();
            assert_eq!(s.h.data(), &[h[0] as f32, h[1] as f32]);
            assert_eq!(s.c.data(), &[c[0] as f32, c[1] as f32]);
        }
    }

    #[test]
    fn eight_levels_track_full_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_model(5, 6, 8);
        let x: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f32> = (0..8).map(|_| rng.gen_range(-0.9..0.9)).collect();
        let s = LstmState::new(DenseTensor::vector(h).unwrap(), DenseTensor::zeros(vec![8])).unwrap();
        let cfg = ScalingConfig {
            x: GroupConfig::new(8, -1),
            wfwd: GroupConfig::new(8, -2),
            wrec: GroupConfig::new(8, -2),
            b: GroupConfig::new(8, -2),
        };
        let q = quantize_lstm(&p, &cfg).unwrap();
        let fp = lstm_cell_trace(&p, &x, &s).unwrap();
        let ml = lstm_cell_ml_trace(&q, &x, &s).unwrap();
        for g in 0..4 {
            for j in 0..8 {
                assert!((fp.pre[g][j] - ml.pre[g][j]).abs() < 0.1);
            }
        }
    }

    #[test]
    fn zero_params_stay_near_zero_output() {
        let p = LstmParams::zeros(3, 4);
        let cfg = ScalingConfig::uniform(4, -3);
        let q = quantize_lstm(&p, &cfg).unwrap();
        let x = DenseTensor::vector(vec![0.4, -0.2, 0.9]).unwrap();
        let fp = lstm_cell_fp_state(&p, &x);
        let ml = lstm_cell_ml(&q, &x, &LstmState::zeros(4)).unwrap();
        // every weight reconstructs to ±α·2^(1-n); a loose propagated bound
        let wq = cfg.wfwd.residual_bound();
        let pre_bound = wq * (3.0 * 2.0 + 4.0 * 2.0) + cfg.b.residual_bound();
        for (a, b) in fp.h.data().iter().zip(ml.h.data()) {
            assert!(((a - b).abs() as f64) <= pre_bound, "{a} vs {b}");
        }
    }

    fn lstm_cell_fp_state(p: &LstmParams, x: &DenseTensor) -> LstmState {
        crate::lstm::lstm_cell_fp(p, x, &LstmState::zeros(p.n_hidden())).unwrap()
    }

    #[test]
    fn forward_and_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_model(6, 4, 5);
        let seq = DenseTensor::matrix(12, 4, (0..48).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let q = quantize_lstm(&p, &ScalingConfig::uniform(3, -1)).unwrap();
        let a = lstm_forward_ml(&q, &seq, None).unwrap();
        let b = lstm_forward_ml(&q.clone().with_path(DotPath::Integer), &seq, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, lstm_forward_ml(&q, &seq, None).unwrap());
        assert!(a.data().iter().all(|h| h.abs() < 1.0));

        let one = DenseTensor::matrix(1, 4, seq.row(0).to_vec()).unwrap();
        let s = lstm_cell_ml(&q, &DenseTensor::vector(seq.row(0).to_vec()).unwrap(), &LstmState::zeros(5)).unwrap();
        assert_eq!(lstm_forward_ml(&q, &one, None).unwrap().data(), s.h.data());
    }

    #[test]
    fn residual_stats_respect_group_bounds() {
        let p = random_model(9, 6, 5);
        for n in 1..=6 {
            let cfg = ScalingConfig::uniform(n, -1);
            let stats = residual_stats(&p, &quantize_lstm(&p, &cfg).unwrap()).unwrap();
            for (g, st) in stats {
                assert!(st.max_abs <= cfg.get(g).residual_bound(), "{g:?} n={n}: {st:?}");
                assert!(st.rms <= st.max_abs);
            }
            assert_eq!(stats[0].1.count, 4 * 5 * 6);
            assert_eq!(stats[2].1.count, 4 * 5);
        }
    }

    #[test]
    fn scaling_covariance_on_codebook_weights() {
        // weights already on the (n=3, α=1/4) codebook; halving them and
        // doubling α gives identical dot values
        let p = random_model(7, 4, 3);
        let q = quantize_lstm(&p, &ScalingConfig::uniform(3, -2)).unwrap();
        let on_book = q.dequantize().unwrap();
        let mut halved = on_book.clone();
        for g in Gate::ALL {
            let w = &on_book.gate(g).w_fwd;
            halved.gate_mut(g).w_fwd =
                DenseTensor::new(w.shape().to_vec(), w.data().iter().map(|v| v / 2.0).collect()).unwrap();
        }
        let mut cfg_half = ScalingConfig::uniform(3, -2);
        cfg_half.wfwd = GroupConfig::new(3, -3);
        let a = quantize_lstm(&on_book, &ScalingConfig::uniform(3, -2)).unwrap();
        let b = quantize_lstm(&halved, &cfg_half).unwrap();
        let xq = MultiLevelTensor::quantize_f32(&[0.3, -0.1, 0.7, -0.9], 3, -1).unwrap();
        for g in Gate::ALL {
            let pa = PreparedMatrix::new(&a.gate(g).w_fwd).unwrap();
            let pb = PreparedMatrix::new(&b.gate(g).w_fwd).unwrap();
            let va = pa.matvec(&xq, None, DotPath::Bitplane).unwrap();
            let vb = pb.matvec(&xq, None, DotPath::Bitplane).unwrap();
            let doubled: Vec<f64> = vb.iter().map(|v| 2.0 * v).collect();
            assert_eq!(va, doubled);
            assert_eq!(a.gate(g).w_fwd.planes(), b.gate(g).w_fwd.planes());
        }
    }

    #[test]
    fn calibration_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_model(8, 3, 4);
        let seq: Vec<f32> = (0..30).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let cfg = calibrate_config(&p, &[&seq], 5, 4).unwrap();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.x.levels, 5);
        assert_eq!(cfg.b.levels, 4);
        // tiny values clamp to the smallest allowed exponent
        let g = calibrate_group(&[1e-9, -1e-9], 2).unwrap();
        assert_eq!(g.alpha_exp, MIN_ALPHA_EXP);
    }

    #[test]
    fn fixed_point_baseline_converges_with_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_model(9, 4, 6);
        let seq = DenseTensor::matrix(15, 4, (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let fp = lstm_forward_fp(&p, &seq, None).unwrap();
        let gap = |bits: u32| {
            let m = FixedPointLstm::calibrated(&p, &[seq.data()], bits, bits).unwrap();
            let out = crate::lstm::run_sequence(&m, &seq, None).unwrap();
            out.data().iter().zip(fp.data()).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max)
        };
        assert!(gap(16) < 1e-3);
        assert!(gap(16) < gap(4));
        assert!(FixedPointLstm::new(&p, 0, 4, 0).is_err());
        assert!(FixedPointLstm::new(&p, 4, 17, 0).is_err());
    }
}
