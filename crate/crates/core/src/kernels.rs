//! Multi-level MAC: bitplane XNOR-popcount dot products combined by shifts,
//! plus an odd-integer path that must agree with it exactly.
//!
//! With `x̂[k] = 2^(kx+1-nx) · ox[k]` and `ŵ[k] = 2^(kw+1-nw) · ow[k]`, where
//! `ox = Σ_i sx_i · 2^(nx-i)` (likewise `ow`), the dot product is
//!
//! ```text
//! Σ_k x̂[k]·ŵ[k] = 2^γ · Σ_i Σ_j 2^((nx-i)+(nw-j)) · Σ_k sx_i[k]·sw_j[k]
//!                = 2^γ · Σ_k ox[k]·ow[k],      γ = kx + kw + (1-nx) + (1-nw)
//! ```
//!
//! The inner sums over `k` are XNOR-popcount dots of single planes, so the
//! whole product is integer work followed by one shift by `γ`.

use crate::error::{ensure, Error, Result};
use crate::quant::{pow2, MultiLevelTensor};
use crate::tensor::{xnor_dot_words, BitPlane};

/// Exact dyadic value `acc · 2^gamma_exp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScaledAccumulator {
    pub acc: i64,
    pub gamma_exp: i32,
}

/// Largest `|acc|` that [`shift_scale`] will convert.
pub const EXACT_ACC_LIMIT: i64 = 1 << 52;
/// Largest `|gamma_exp|` that [`shift_scale`] will apply.
pub const EXACT_GAMMA_LIMIT: i32 = 60;

impl ScaledAccumulator {
    pub fn value(self) -> Result<f64> {
        shift_scale(self)
    }

    /// Rewrites to the smaller exponent `g` without changing the value.
    pub fn align_to(self, g: i32) -> Result<Self> {
        ensure!(g <= self.gamma_exp, Numeric, "cannot align exponent {} up to {g}", self.gamma_exp);
        let shift = (self.gamma_exp - g) as u32;
        let acc = self
            .acc
            .checked_mul(1i64.checked_shl(shift).filter(|&m| m > 0).ok_or_else(overflow)?)
            .ok_or_else(overflow)?;
        Ok(Self { acc, gamma_exp: g })
    }
}

fn overflow() -> Error {
    Error::Numeric("accumulator overflow".into())
}

/// Selects the dot-product implementation used by [`ml_matvec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DotPath {
    #[default]
    Bitplane,
    Integer,
}

fn gamma_exp(x: &MultiLevelTensor, w: &MultiLevelTensor) -> i32 {
    x.alpha_exp() + w.alpha_exp() + (1 - x.levels() as i32) + (1 - w.levels() as i32)
}

/// Rejects operand sizes whose worst-case sum would not fit the 64-bit
/// accumulator: `K · (2^nx - 1) · (2^nw - 1) < 2^62`.
fn check_capacity(k: usize, nx: u32, nw: u32) -> Result<()> {
    let bound = (k as u128) * ((1u128 << nx) - 1) * ((1u128 << nw) - 1);
    ensure!(
        bound < 1u128 << 62,
        Numeric,
        "K={k} with {nx}x{nw} levels exceeds the 64-bit accumulator"
    );
    Ok(())
}

fn check_operands(x: &MultiLevelTensor, w: &MultiLevelTensor) -> Result<()> {
    ensure!(
        x.len() == w.len(),
        Dimension,
        "dot operands differ in length: {} vs {}",
        x.len(),
        w.len()
    );
    check_capacity(x.len(), x.levels(), w.levels())
}

/// Cross-plane XNOR-popcount dot:
/// `Σ_i Σ_j 2^((nx-i)+(nw-j)) · xnor_dot(plane_i(x), plane_j(w))`.
pub fn ml_dot_bitplane(x: &MultiLevelTensor, w: &MultiLevelTensor) -> Result<ScaledAccumulator> {
    check_operands(x, w)?;
    let k = x.len();
    let nx = x.levels();
    let nw = w.levels();
    let mut acc = 0i64;
    for (i, px) in x.planes().iter().enumerate() {
        for (j, pw) in w.planes().iter().enumerate() {
            let shift = (nx - 1 - i as u32) + (nw - 1 - j as u32);
            acc += xnor_dot_words(px.words(), pw.words(), k) << shift;
        }
    }
    Ok(ScaledAccumulator { acc, gamma_exp: gamma_exp(x, w) })
}

/// Same product through odd-integer codes: `Σ_k ox[k] · ow[k]`.
pub fn ml_dot_integer(x: &MultiLevelTensor, w: &MultiLevelTensor) -> Result<ScaledAccumulator> {
    check_operands(x, w)?;
    let acc = (0..x.len()).map(|e| x.odd_code(e) * w.odd_code(e)).sum();
    Ok(ScaledAccumulator { acc, gamma_exp: gamma_exp(x, w) })
}

/// `acc · 2^gamma_exp` as an exact binary64 value.
pub fn shift_scale(a: ScaledAccumulator) -> Result<f64> {
    if a.acc == 0 {
        return Ok(0.0);
    }
    ensure!(
        a.acc.unsigned_abs() < EXACT_ACC_LIMIT as u64,
        Numeric,
        "accumulator {} outside the exact window",
        a.acc
    );
    ensure!(
        a.gamma_exp.abs() <= EXACT_GAMMA_LIMIT,
        Numeric,
        "shift {} outside the exact window",
        a.gamma_exp
    );
    Ok(a.acc as f64 * pow2(a.gamma_exp))
}

/// `Σ_ij 2^(si+sj) · (len - 2·popcount(x_i ^ w_j))`, relying on zero padding.
#[inline(always)]
fn cross_plane_acc_generic(xs: &[BitPlane], w_row: &[u64], wpp: usize, len: usize) -> i64 {
    let nx = xs.len() as u32;
    let nw = (w_row.len() / wpp) as u32;
    let mut disagree = 0u64;
    if wpp == 1 {
        let d = xs.iter().fold(0u64, |acc, px| {
            let a = px.words()[0];
            let row = w_row.iter().fold(0u64, |row, &b| (row << 1) + (a ^ b).count_ones() as u64);
            (acc << 1) + row
        });
        let planes_x = (1i64 << nx) - 1;
        let planes_w = (1i64 << nw) - 1;
        return len as i64 * planes_x * planes_w - 2 * d as i64;
    }
    for (i, px) in xs.iter().enumerate() {
        let xw = &px.words()[..wpp];
        let mut row = 0u64;
        for pw in w_row.chunks_exact(wpp) {
            let d: u64 = xw.iter().zip(pw).map(|(a, b)| (a ^ b).count_ones() as u64).sum();
            row = (row << 1) + d;
        }
        disagree += row << (nx - 1 - i as u32);
    }
    let planes_x = (1i64 << nx) - 1;
    let planes_w = (1i64 << nw) - 1;
    len as i64 * planes_x * planes_w - 2 * disagree as i64
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn cross_plane_acc_popcnt(xs: &[BitPlane], w_row: &[u64], wpp: usize, len: usize) -> i64 {
    cross_plane_acc_generic(xs, w_row, wpp, len)
}

/// Cross-plane sum of one row (`w_row` holds its planes back to back, `wpp`
/// words each). Uses the hardware popcount when the CPU has one.
fn cross_plane_acc(xs: &[BitPlane], w_row: &[u64], wpp: usize, len: usize) -> i64 {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("popcnt") {
        // SAFETY: the required CPU feature was detected at run time.
        return unsafe { cross_plane_acc_popcnt(xs, w_row, wpp, len) };
    }
    cross_plane_acc_generic(xs, w_row, wpp, len)
}

/// A quantized matrix laid out for repeated matrix-vector products: every
/// row's planes start on a word boundary, and the odd codes are cached.
#[derive(Debug, Clone)]
pub struct PreparedMatrix {
    rows: usize,
    cols: usize,
    levels: u32,
    alpha_exp: i32,
    words_per_plane: usize,
    /// `[row][level][word]`
    words: Vec<u64>,
    /// `[row][col]`
    codes: Vec<i64>,
}

impl PreparedMatrix {
    pub fn new(w: &MultiLevelTensor) -> Result<Self> {
        ensure!(w.shape().len() == 2, Dimension, "expected a matrix, got shape {:?}", w.shape());
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        let wpp = cols.div_ceil(64);
        let levels = w.levels();
        let mut words = Vec::with_capacity(rows * levels as usize * wpp);
        for r in 0..rows {
            for p in w.planes() {
                words.extend_from_slice(p.slice(r * cols, cols)?.words());
            }
        }
        Ok(Self {
            rows,
            cols,
            levels,
            alpha_exp: w.alpha_exp(),
            words_per_plane: wpp,
            words,
            codes: w.odd_codes(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn alpha_exp(&self) -> i32 {
        self.alpha_exp
    }

    fn dot_row(&self, r: usize, x: &MultiLevelTensor, path: DotPath) -> ScaledAccumulator {
        let nx = x.levels();
        let nw = self.levels;
        let gamma_exp = x.alpha_exp() + self.alpha_exp + (1 - nx as i32) + (1 - nw as i32);
        let acc = match path {
            DotPath::Bitplane => {
                let start = r * self.levels as usize * self.words_per_plane;
                let row = &self.words[start..start + self.levels as usize * self.words_per_plane];
                cross_plane_acc(x.planes(), row, self.words_per_plane, self.cols)
            }
            DotPath::Integer => {
                let row = &self.codes[r * self.cols..(r + 1) * self.cols];
                row.iter().enumerate().map(|(e, &ow)| x.odd_code(e) * ow).sum()
            }
        };
        ScaledAccumulator { acc, gamma_exp }
    }

    /// Per-row scaled accumulators for `W · x`.
    pub fn dot_all(&self, x: &MultiLevelTensor, path: DotPath) -> Result<Vec<ScaledAccumulator>> {
        self.check_vector(x)?;
        Ok((0..self.rows).map(|r| self.dot_row(r, x, path)).collect())
    }

    fn check_vector(&self, x: &MultiLevelTensor) -> Result<()> {
        ensure!(
            x.len() == self.cols,
            Dimension,
            "matrix has {} columns, vector has {}",
            self.cols,
            x.len()
        );
        check_capacity(self.cols, x.levels(), self.levels)
    }

    /// `shift_scale(W_r · x) + bias[r]` for every row.
    pub fn matvec(&self, x: &MultiLevelTensor, bias: Option<&[f64]>, path: DotPath) -> Result<Vec<f64>> {
        if let Some(b) = bias {
            ensure!(b.len() == self.rows, Dimension, "bias has {} entries for {} rows", b.len(), self.rows);
        }
        self.check_vector(x)?;
        (0..self.rows)
            .map(|r| Ok(shift_scale(self.dot_row(r, x, path))? + bias.map_or(0.0, |b| b[r])))
            .collect()
    }
}

/// Quantized matrix-vector product with an optional real-valued bias.
pub fn ml_matvec(
    w: &MultiLevelTensor,
    x: &MultiLevelTensor,
    bias: Option<&[f64]>,
    path: DotPath,
) -> Result<Vec<f64>> {
    PreparedMatrix::new(w)?.matvec(x, bias, path)
}
