//! Sequence-classification datasets: the binary container format and a
//! seeded synthetic generator of multi-channel oscillatory signals.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure, Error, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"MLBD";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 5 * 4;

/// `S` sequences of `T` steps with `F` features each, stored row-major as
/// `[S × T × F]`. `labels` is `None` for an unlabeled set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: usize,
    timesteps: usize,
    features: usize,
    n_classes: usize,
    data: Vec<f32>,
    labels: Option<Vec<u32>>,
}

impl Dataset {
    pub fn new(
        samples: usize,
        timesteps: usize,
        features: usize,
        n_classes: usize,
        data: Vec<f32>,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        ensure!(
            samples >= 1 && timesteps >= 1 && features >= 1,
            Validation,
            "dataset dimensions must be positive (S={samples}, T={timesteps}, F={features})"
        );
        ensure!(
            data.len() == samples * timesteps * features,
            Dimension,
            "dataset payload has {} values, expected {}",
            data.len(),
            samples * timesteps * features
        );
        ensure!(data.iter().all(|v| v.is_finite()), Validation, "non-finite value in dataset");
        if let Some(l) = &labels {
            ensure!(l.len() == samples, Dimension, "{} labels for {samples} samples", l.len());
            ensure!(n_classes >= 1, Validation, "labeled dataset needs at least one class");
            if let Some(bad) = l.iter().find(|&&y| y as usize >= n_classes) {
                return Err(Error::Validation(format!("label {bad} outside [0, {n_classes})")));
            }
        }
        Ok(Self { samples, timesteps, features, n_classes, data, labels })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Flattened `[T × F]` sequence of sample `s`.
    pub fn sample(&self, s: usize) -> &[f32] {
        let len = self.timesteps * self.features;
        &self.data[s * len..(s + 1) * len]
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[u32]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Validation("dataset has no labels".into()))
    }

    /// New dataset holding the given samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        ensure!(!indices.is_empty(), Validation, "empty subset");
        let mut data = Vec::with_capacity(indices.len() * self.timesteps * self.features);
        for &i in indices {
            ensure!(i < self.samples, Dimension, "sample index {i} out of range");
            data.extend_from_slice(self.sample(i));
        }
        let labels = self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
        Self::new(indices.len(), self.timesteps, self.features, self.n_classes, data, labels)
    }

    /// Deterministic split by seeded shuffle: the first `train_fraction` of
    /// the permutation trains, the rest is held out.
    pub fn split(&self, seed: u64, train_fraction: f64) -> Result<(Self, Self)> {
        ensure!(
            train_fraction > 0.0 && train_fraction < 1.0,
            Validation,
            "train fraction {train_fraction} outside (0, 1)"
        );
        ensure!(self.samples >= 2, Validation, "need at least two samples to split");
        let mut idx: Vec<usize> = (0..self.samples).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = ((self.samples as f64 * train_fraction).round() as usize).clamp(1, self.samples - 1);
        Ok((self.subset(&idx[..n_train])?, self.subset(&idx[n_train..])?))
    }

    /// Binary container: magic, then version, S, T, F, n_classes as u32 LE,
    /// then `S·T·F` binary32 LE values, then `S` u32 LE labels. A set with
    /// `n_classes = 0` has no label block.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len() + 4 * self.samples);
        out.extend_from_slice(&DATASET_MAGIC);
        let n_classes = if self.labels.is_some() { self.n_classes as u32 } else { 0 };
        for v in [
            DATASET_VERSION,
            self.samples as u32,
            self.timesteps as u32,
            self.features as u32,
            n_classes,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(labels) = &self.labels {
            for y in labels {
                out.extend_from_slice(&y.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[..4] != DATASET_MAGIC {
            return Err(Error::Magic { expected: DATASET_MAGIC });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                name: "dataset header".into(),
                needed: HEADER_LEN as u64,
                available: bytes.len() as u64,
            });
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let version = word(0);
        if version != DATASET_VERSION {
            return Err(Error::Version { found: version, expected: DATASET_VERSION });
        }
        let (s, t, f, k) = (word(1) as usize, word(2) as usize, word(3) as usize, word(4) as usize);
        let n_values = s
            .checked_mul(t)
            .and_then(|v| v.checked_mul(f))
            .ok_or_else(|| Error::Validation("dataset dimensions overflow".into()))?;
        let label_bytes = if k > 0 { 4 * s } else { 0 };
        let expected = HEADER_LEN as u64 + 4 * n_values as u64 + label_bytes as u64;
        let available = bytes.len() as u64;
        if available < expected {
            return Err(Error::Truncated { name: "dataset payload".into(), needed: expected, available });
        }
        if available > expected {
            return Err(Error::SizeMismatch {
                name: "dataset payload".into(),
                declared: available,
                expected,
            });
        }
        let body = &bytes[HEADER_LEN..];
        let data = body[..4 * n_values]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let labels = (k > 0).then(|| {
            body[4 * n_values..]
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        });
        Self::new(s, t, f, k, data, labels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_bytes(&bytes)
}

/// Parameters of the synthetic oscillation generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub samples: usize,
    pub timesteps: usize,
    pub features: usize,
    pub n_classes: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    /// Cycles over the whole sequence for class 0.
    pub base_cycles: f64,
    /// Extra cycles per class index.
    pub cycle_step: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: 600,
            timesteps: 100,
            features: 32,
            n_classes: 2,
            noise: 1.0,
            base_cycles: 2.0,
            cycle_step: 3.0,
        }
    }
}

impl SynthSpec {
    /// Angular frequency (radians per step) of class `k`.
    pub fn omega(&self, class: usize) -> f64 {
        let cycles = self.base_cycles + self.cycle_step * class as f64;
        2.0 * std::f64::consts::PI * cycles / self.timesteps as f64
    }
}

/// Class `k` samples are sinusoids at a class-specific frequency on every
/// channel, with a fixed per-channel amplitude and phase offset, a random
/// per-sample phase, and additive Gaussian noise. Labels cycle through the
/// classes and are then shuffled, so counts differ by at most one.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Dataset> {
    ensure!(
        spec.samples >= 1 && spec.timesteps >= 1 && spec.features >= 1,
        Validation,
        "synthetic dataset dimensions must be positive"
    );
    ensure!(spec.n_classes >= 1, Validation, "need at least one class");
    ensure!(spec.noise >= 0.0 && spec.noise.is_finite(), Validation, "noise must be a finite σ >= 0");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let amplitude: Vec<f64> = (0..spec.features).map(|_| rng.gen_range(0.5..1.5)).collect();
    let offset: Vec<f64> = (0..spec.features)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    let mut labels: Vec<u32> = (0..spec.samples).map(|s| (s % spec.n_classes) as u32).collect();
    labels.shuffle(&mut rng);
    let noise = (spec.noise > 0.0).then(|| Normal::new(0.0, spec.noise).expect("valid σ"));
    let mut data = Vec::with_capacity(spec.samples * spec.timesteps * spec.features);
    for &y in &labels {
        let omega = spec.omega(y as usize);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        for t in 0..spec.timesteps {
            for f in 0..spec.features {
                let clean = amplitude[f] * (omega * t as f64 + phase + offset[f]).sin();
                let eps = noise.as_ref().map_or(0.0, |n| n.sample(&mut rng));
                data.push((clean + eps) as f32);
            }
        }
    }
    Dataset::new(spec.samples, spec.timesteps, spec.features, spec.n_classes, data, Some(labels))
}
