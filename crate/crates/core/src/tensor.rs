//! Dense real tensors and packed sign-bit planes.

use std::io::{Read, Write};

use crate::error::{ensure, Error, Result};

/// Row-major binary32 tensor. Every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        ensure!(
            expected == data.len(),
            Dimension,
            "shape {:?} holds {} values, got {}",
            shape,
            expected,
            data.len()
        );
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite value {} at index {i}", data[i])));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn vector(data: Vec<f32>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a tensor from binary64 values, rounding each to binary32.
    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            self.data.len()
        }
    }

    /// Row `r` of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[f32] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// Reference matrix-vector product, accumulated in binary64.
pub fn matvec(a: &DenseTensor, x: &DenseTensor) -> Result<DenseTensor> {
    ensure!(a.shape.len() == 2, Dimension, "matvec needs a matrix, got shape {:?}", a.shape);
    let (m, n) = (a.shape[0], a.shape[1]);
    ensure!(x.len() == n, Dimension, "matrix has {n} columns but vector has {}", x.len());
    let out = (0..m)
        .map(|j| {
            a.row(j)
                .iter()
                .zip(&x.data)
                .map(|(&w, &v)| w as f64 * v as f64)
                .sum::<f64>() as f32
        })
        .collect();
    DenseTensor::new(vec![m], out)
}

/// Packed sign bits: bit 1 is +1, bit 0 is -1. LSB-first within 64-bit
/// words; bits past `len` are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitPlane {
    len: usize,
    words: Vec<u64>,
}

#[inline]
fn word_count(len: usize) -> usize {
    len.div_ceil(64)
}

/// Mask selecting the valid bits of the last word.
#[inline]
fn tail_mask(len: usize) -> u64 {
    match len % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

impl BitPlane {
    /// All bits zero, i.e. all -1.
    pub fn zeros(len: usize) -> Self {
        Self { len, words: vec![0; word_count(len)] }
    }

    pub fn from_words(len: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != word_count(len) {
            return Err(Error::Structure(format!(
                "bitplane of {len} bits needs {} words, got {}",
                word_count(len),
                words.len()
            )));
        }
        if let Some(&last) = words.last() {
            if last & !tail_mask(len) != 0 {
                return Err(Error::Structure("bitplane padding bits are not zero".into()));
            }
        }
        Ok(Self { len, words })
    }

    pub fn from_bools(bits: impl IntoIterator<Item = bool>) -> Self {
        let mut words = Vec::new();
        let mut len = 0;
        for b in bits {
            if len % 64 == 0 {
                words.push(0);
            }
            if b {
                words[len / 64] |= 1 << (len % 64);
            }
            len += 1;
        }
        Self { len, words }
    }

    /// Packs a slice of ±1 signs (`s >= 0` becomes a set bit).
    pub fn from_signs(signs: &[i8]) -> Self {
        Self::from_bools(signs.iter().map(|&s| s >= 0))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    /// The ±1 value at position `i`.
    #[inline]
    pub fn sign(&self, i: usize) -> i8 {
        if self.get(i) {
            1
        } else {
            -1
        }
    }

    pub fn unpack(&self) -> Vec<i8> {
        (0..self.len).map(|i| self.sign(i)).collect()
    }

    pub fn complement(&self) -> Self {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        if let Some(last) = words.last_mut() {
            *last &= tail_mask(self.len);
        }
        Self { len: self.len, words }
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Copies bits `start..start + len` into a new, word-aligned plane.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        ensure!(
            start + len <= self.len,
            Dimension,
            "slice {start}..{} out of range for {} bits",
            start + len,
            self.len
        );
        let n_words = word_count(len);
        let mut words = vec![0u64; n_words];
        let shift = start % 64;
        let base = start / 64;
        for (k, w) in words.iter_mut().enumerate() {
            let lo = self.words[base + k] >> shift;
            let hi = if shift != 0 {
                self.words.get(base + k + 1).map_or(0, |&next| next << (64 - shift))
            } else {
                0
            };
            *w = lo | hi;
        }
        if let Some(last) = words.last_mut() {
            *last &= tail_mask(len);
        }
        Ok(Self { len, words })
    }

    /// Appends the bits of `other` after this plane's bits.
    pub fn extend(&mut self, other: &BitPlane) {
        for i in 0..other.len {
            if self.len % 64 == 0 {
                self.words.push(0);
            }
            if other.get(i) {
                self.words[self.len / 64] |= 1 << (self.len % 64);
            }
            self.len += 1;
        }
    }

    /// Serialized size in bytes: 8-byte length plus the words.
    pub fn byte_len(&self) -> usize {
        8 + 8 * self.words.len()
    }

    /// Little-endian: u64 bit length followed by the words.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&(self.len as u64).to_le_bytes())?;
        for word in &self.words {
            w.write_all(&word.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf).map_err(|_| truncated("bitplane header", 8))?;
        let len = u64::from_le_bytes(buf) as usize;
        let n = word_count(len);
        let mut words = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf).map_err(|_| truncated("bitplane words", 8 * n as u64))?;
            words.push(u64::from_le_bytes(buf));
        }
        Self::from_words(len, words)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}

fn truncated(name: &str, needed: u64) -> Error {
    Error::Truncated { name: name.into(), needed, available: 0 }
}

/// Packs signs of real values: `v >= 0` maps to a set bit (+1).
pub fn pack_signs(values: &[f32]) -> Result<BitPlane> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("non-finite value at index {i}")));
    }
    Ok(BitPlane::from_bools(values.iter().map(|&v| v >= 0.0)))
}

/// Signed dot product of two ±1 vectors: `2 * popcount(xnor) - N`.
pub fn xnor_popcount_dot(a: &BitPlane, b: &BitPlane) -> Result<i64> {
    ensure!(
        a.len == b.len,
        Dimension,
        "bitplane lengths differ: {} vs {}",
        a.len,
        b.len
    );
    ensure!(a.len > 0, Dimension, "xnor dot of empty bitplanes");
    Ok(xnor_dot_words(&a.words, &b.words, a.len))
}

/// Unchecked kernel over raw words; `len` is the logical bit count.
#[inline]
pub(crate) fn xnor_dot_words(a: &[u64], b: &[u64], len: usize) -> i64 {
    let n = a.len();
    debug_assert_eq!(n, b.len());
    if n == 0 {
        return 0;
    }
    let mut agree: u64 = 0;
    for k in 0..n - 1 {
        agree += (!(a[k] ^ b[k])).count_ones() as u64;
    }
    agree += (!(a[n - 1] ^ b[n - 1]) & tail_mask(len)).count_ones() as u64;
    2 * agree as i64 - len as i64
}
