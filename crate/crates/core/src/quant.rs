//! Sign binarization, multi-level residual binarization with power-of-two
//! scales, and the conventional fixed-point baseline.
//!
//! A multi-level code with `n` levels and scale `α = 2^k` approximates `x` by
//! `α · Σ s_i · 2^(1-i)`, each `s_i ∈ {-1, +1}` chosen greedily on the running
//! residual. The same value is `α · o · 2^(1-n)` for the odd integer
//! `o = Σ s_i · 2^(n-i)`, which is what lets the kernels run on integers and
//! apply `α` as a single shift.

use crate::error::{ensure, Error, Result};
use crate::tensor::{BitPlane, DenseTensor};

/// Upper bound on levels for which odd-integer codes fit comfortably in `i64`.
pub const MAX_LEVELS: u32 = 32;

/// `+1` for `x >= 0`, else `-1`.
#[inline]
pub fn sign_binarize(x: f64) -> i8 {
    if x >= 0.0 {
        1
    } else {
        -1
    }
}

/// `clip((x + 1) / 2, 0, 1)`.
#[inline]
pub fn hard_sigmoid(x: f64) -> f64 {
    ((x + 1.0) / 2.0).clamp(0.0, 1.0)
}

/// `+1` with probability `hard_sigmoid(x)`, driven by the caller's uniform
/// sample `u ∈ [0, 1)`.
pub fn stochastic_binarize(x: f64, u: f64) -> Result<i8> {
    ensure!((0.0..1.0).contains(&u), Validation, "uniform sample {u} outside [0, 1)");
    ensure!(x.is_finite(), Validation, "non-finite input {x}");
    Ok(if u < hard_sigmoid(x) { 1 } else { -1 })
}

/// Scale of level `i` (1-based): `2^(alpha_exp + 1 - i)`.
#[inline]
pub fn level_scale(alpha_exp: i32, level: u32) -> f64 {
    pow2(alpha_exp + 1 - level as i32)
}

#[inline]
pub(crate) fn pow2(e: i32) -> f64 {
    if (-1022..=1023).contains(&e) {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else {
        2f64.powi(e)
    }
}

/// Output of [`multi_level_binarize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Binarized {
    pub signs: Vec<i8>,
    pub residual: f64,
}

/// Greedy residual binarization of one value over `levels` levels, each
/// level's scale half the previous one.
pub fn multi_level_binarize(x: f64, levels: u32, alpha_exp: i32) -> Result<Binarized> {
    ensure!(levels >= 1, Validation, "level count must be at least 1");
    ensure!(x.is_finite(), Validation, "non-finite input {x}");
    let mut signs = Vec::with_capacity(levels as usize);
    let residual = binarize_into(x, levels, alpha_exp, &mut signs);
    Ok(Binarized { signs, residual })
}

#[inline]
fn binarize_into(x: f64, levels: u32, alpha_exp: i32, signs: &mut Vec<i8>) -> f64 {
    let mut r = x;
    for i in 1..=levels {
        let s = sign_binarize(r);
        signs.push(s);
        r -= s as f64 * level_scale(alpha_exp, i);
    }
    r
}

/// `α · Σ s_i · 2^(1-i)`.
pub fn reconstruct(signs: &[i8], alpha_exp: i32) -> f64 {
    signs
        .iter()
        .zip(1u32..)
        .map(|(&s, i)| s as f64 * level_scale(alpha_exp, i))
        .sum()
}

/// `Σ s_i · 2^(n-i)`; always odd with magnitude at most `2^n - 1`.
pub fn to_odd_integer(signs: &[i8]) -> i64 {
    signs.iter().fold(0i64, |acc, &s| 2 * acc + s as i64)
}

/// Tensor quantized by multi-level binarization: one bitplane per level over
/// the flattened elements and a single power-of-two scale `2^alpha_exp`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiLevelTensor {
    shape: Vec<usize>,
    alpha_exp: i32,
    planes: Vec<BitPlane>,
}

impl MultiLevelTensor {
    pub fn from_parts(shape: Vec<usize>, alpha_exp: i32, planes: Vec<BitPlane>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if planes.is_empty() || planes.len() > MAX_LEVELS as usize {
            return Err(Error::Structure(format!(
                "multi-level tensor needs 1..={MAX_LEVELS} planes, got {}",
                planes.len()
            )));
        }
        if let Some(p) = planes.iter().find(|p| p.len() != n) {
            return Err(Error::Structure(format!(
                "plane of {} bits does not match shape {shape:?} ({n} elements)",
                p.len()
            )));
        }
        Ok(Self { shape, alpha_exp, planes })
    }

    /// Quantizes `values` (row-major over `shape`).
    pub fn quantize(shape: Vec<usize>, values: &[f64], levels: u32, alpha_exp: i32) -> Result<Self> {
        ensure!((1..=MAX_LEVELS).contains(&levels), Validation, "levels {levels} outside 1..={MAX_LEVELS}");
        let n: usize = shape.iter().product();
        ensure!(n == values.len(), Dimension, "shape {shape:?} vs {} values", values.len());
        ensure!(values.iter().all(|v| v.is_finite()), Validation, "non-finite value in tensor");
        let l = levels as usize;
        let mut words = vec![vec![0u64; n.div_ceil(64)]; l];
        let mut signs = Vec::with_capacity(l);
        for (e, &x) in values.iter().enumerate() {
            signs.clear();
            binarize_into(x, levels, alpha_exp, &mut signs);
            for (plane, &s) in words.iter_mut().zip(&signs) {
                if s > 0 {
                    plane[e / 64] |= 1 << (e % 64);
                }
            }
        }
        let planes = words
            .into_iter()
            .map(|w| BitPlane::from_words(n, w))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { shape, alpha_exp, planes })
    }

    /// Quantizes a 1-D slice of binary32 values.
    pub fn quantize_f32(values: &[f32], levels: u32, alpha_exp: i32) -> Result<Self> {
        let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        Self::quantize(vec![values.len()], &v, levels, alpha_exp)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.planes[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn levels(&self) -> u32 {
        self.planes.len() as u32
    }

    pub fn alpha_exp(&self) -> i32 {
        self.alpha_exp
    }

    pub fn planes(&self) -> &[BitPlane] {
        &self.planes
    }

    pub fn signs(&self, e: usize) -> Vec<i8> {
        self.planes.iter().map(|p| p.sign(e)).collect()
    }

    #[inline]
    pub fn odd_code(&self, e: usize) -> i64 {
        self.planes.iter().fold(0i64, |acc, p| 2 * acc + p.sign(e) as i64)
    }

    pub fn odd_codes(&self) -> Vec<i64> {
        (0..self.len()).map(|e| self.odd_code(e)).collect()
    }

    /// Reconstructed value of element `e`.
    pub fn value(&self, e: usize) -> f64 {
        self.odd_code(e) as f64 * pow2(self.alpha_exp + 1 - self.levels() as i32)
    }

    pub fn dequantize(&self) -> Vec<f64> {
        (0..self.len()).map(|e| self.value(e)).collect()
    }

    pub fn to_dense(&self) -> Result<DenseTensor> {
        DenseTensor::from_f64(self.shape.clone(), &self.dequantize())
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            self.len()
        }
    }

    /// Row `r` of a 2-D tensor as a 1-D tensor with word-aligned planes.
    pub fn row(&self, r: usize) -> Result<Self> {
        ensure!(self.shape.len() == 2, Dimension, "row() needs a matrix, got {:?}", self.shape);
        ensure!(r < self.shape[0], Dimension, "row {r} out of range for {:?}", self.shape);
        let k = self.shape[1];
        let planes = self
            .planes
            .iter()
            .map(|p| p.slice(r * k, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { shape: vec![k], alpha_exp: self.alpha_exp, planes })
    }
}

/// Quantizes a dense tensor.
pub fn quantize_tensor(t: &DenseTensor, levels: u32, alpha_exp: i32) -> Result<MultiLevelTensor> {
    let v: Vec<f64> = t.data().iter().map(|&x| x as f64).collect();
    MultiLevelTensor::quantize(t.shape().to_vec(), &v, levels, alpha_exp)
}

/// Max absolute and RMS residual of a quantization against its source.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResidualStats {
    pub max_abs: f64,
    pub rms: f64,
    pub count: usize,
}

impl ResidualStats {
    pub fn of(source: &[f64], q: &MultiLevelTensor) -> Self {
        let mut max_abs = 0f64;
        let mut sq = 0f64;
        for (e, &x) in source.iter().enumerate() {
            let r = x - q.value(e);
            max_abs = max_abs.max(r.abs());
            sq += r * r;
        }
        let count = source.len();
        let rms = if count == 0 { 0.0 } else { (sq / count as f64).sqrt() };
        Self { max_abs, rms, count }
    }

    pub fn merge(self, other: Self) -> Self {
        let count = self.count + other.count;
        let rms = if count == 0 {
            0.0
        } else {
            ((self.rms * self.rms * self.count as f64 + other.rms * other.rms * other.count as f64)
                / count as f64)
                .sqrt()
        };
        Self { max_abs: self.max_abs.max(other.max_abs), rms, count }
    }
}

/// Candidate scale exponents for a tensor: every `k` with
/// `2^k ∈ [max|t| / 8, 2 · max|t|]`, plus the power of two closest to
/// `mean|t|`. Sorted, deduplicated. All-zero input gives `[0]`.
pub fn suggest_alpha(values: &[f64]) -> Result<Vec<i32>> {
    ensure!(!values.is_empty(), Validation, "cannot suggest a scale for an empty tensor");
    ensure!(values.iter().all(|v| v.is_finite()), Validation, "non-finite value in tensor");
    let max = values.iter().fold(0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return Ok(vec![0]);
    }
    let lo = (max / 8.0).log2().ceil() as i32;
    let hi = (2.0 * max).log2().floor() as i32;
    let mut out: Vec<i32> = (lo..=hi)
        .filter(|&k| {
            let a = pow2(k);
            a >= max / 8.0 && a <= 2.0 * max
        })
        .collect();
    let mean = values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64;
    if mean > 0.0 {
        out.push(nearest_pow2_exp(mean));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Exponent of the power of two closest to `v > 0` (linear distance; ties go up).
fn nearest_pow2_exp(v: f64) -> i32 {
    let below = v.log2().floor() as i32;
    if v - pow2(below) < pow2(below + 1) - v {
        below
    } else {
        below + 1
    }
}

/// Picks, among `candidates`, the exponent whose `levels`-level
/// quantization of `values` has the smallest squared error. Ties go to the
/// earlier candidate.
pub fn best_alpha_exp(values: &[f64], levels: u32, candidates: &[i32]) -> Result<i32> {
    ensure!(!candidates.is_empty(), Validation, "no candidate exponents");
    ensure!(levels >= 1, Validation, "level count must be at least 1");
    let mut best = (f64::INFINITY, candidates[0]);
    let mut signs = Vec::with_capacity(levels as usize);
    for &k in candidates {
        let err: f64 = values
            .iter()
            .map(|&x| {
                signs.clear();
                let r = binarize_into(x, levels, k, &mut signs);
                r * r
            })
            .sum();
        if err < best.0 {
            best = (err, k);
        }
    }
    Ok(best.1)
}

/// Symmetric two's-complement fixed-point tensor with a power-of-two scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedPointTensor {
    pub shape: Vec<usize>,
    pub bits: u32,
    pub scale_exp: i32,
    pub data: Vec<i32>,
}

impl FixedPointTensor {
    pub fn dequantize(&self) -> Vec<f64> {
        let s = pow2(self.scale_exp);
        self.data.iter().map(|&q| q as f64 * s).collect()
    }

    pub fn to_dense(&self) -> Result<DenseTensor> {
        DenseTensor::from_f64(self.shape.clone(), &self.dequantize())
    }
}

/// Integer range `[lo, hi]` of a `bits`-wide two's-complement word.
pub fn fixed_point_range(bits: u32) -> (i32, i32) {
    let half = 1i32 << (bits - 1);
    (-half, half - 1)
}

/// Smallest `k` with `max_abs <= qmax · 2^k`, where `qmax = 2^(b-1) - 1`
/// (or 1 for the degenerate 1-bit word). Zero input gives 0.
pub fn fixed_point_scale_exp(max_abs: f64, bits: u32) -> i32 {
    if max_abs == 0.0 {
        return 0;
    }
    let qmax = fixed_point_range(bits).1.max(1) as f64;
    let mut k = (max_abs / qmax).log2().ceil() as i32;
    // log2 can be off by one near exact powers of two
    while qmax * pow2(k) < max_abs {
        k += 1;
    }
    while qmax * pow2(k - 1) >= max_abs {
        k -= 1;
    }
    k
}

/// Quantizes values with a per-call power-of-two scale, round-half-to-even
/// and saturating clamp. Returns `(scale_exp, codes)`.
pub fn fixed_point_codes(values: &[f64], bits: u32) -> Result<(i32, Vec<i32>)> {
    ensure!((1..=16).contains(&bits), Validation, "fixed-point width {bits} outside 1..=16");
    ensure!(values.iter().all(|v| v.is_finite()), Validation, "non-finite value");
    let max = values.iter().fold(0f64, |m, v| m.max(v.abs()));
    let k = fixed_point_scale_exp(max, bits);
    Ok((k, fixed_point_codes_at(values, bits, k)?))
}

/// Codes of `values` at a given scale `2^scale_exp`, saturating.
pub fn fixed_point_codes_at(values: &[f64], bits: u32, scale_exp: i32) -> Result<Vec<i32>> {
    ensure!((1..=16).contains(&bits), Validation, "fixed-point width {bits} outside 1..=16");
    let (lo, hi) = fixed_point_range(bits);
    let inv = pow2(-scale_exp);
    Ok(values
        .iter()
        .map(|&v| ((v * inv).round_ties_even() as i64).clamp(lo as i64, hi as i64) as i32)
        .collect())
}

pub fn fixed_point_quantize(t: &DenseTensor, bits: u32) -> Result<FixedPointTensor> {
    let v: Vec<f64> = t.data().iter().map(|&x| x as f64).collect();
    let (scale_exp, data) = fixed_point_codes(&v, bits)?;
    Ok(FixedPointTensor { shape: t.shape().to_vec(), bits, scale_exp, data })
}
