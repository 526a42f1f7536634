//! Closed-form ridge readout on frozen LSTM features, plus the end-to-end
//! pipeline that builds a random recurrent feature extractor and fits a head
//! on top of it.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{ensure, Error, Result};
use crate::eval::{evaluate_accuracy, extract_features};
use crate::lstm::{ClassifierHead, FeatureSource, LstmParams};
use crate::par::Workers;
use crate::tensor::DenseTensor;

/// Smallest accepted ratio between the smallest and largest pivot of the
/// Cholesky factor.
const PIVOT_RATIO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeSpec {
    pub lambda: f64,
    pub feature: FeatureSource,
}

impl Default for RidgeSpec {
    fn default() -> Self {
        Self { lambda: 1e-2, feature: FeatureSource::TimeMean }
    }
}

/// Solves `(FᵀF + λI) B = FᵀY` for `B` (`p × c`) by Cholesky factorization.
/// `features` is `S × p`, `targets` is `S × c`.
pub fn ridge_solve(features: &DMatrix<f64>, targets: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    ensure!(lambda > 0.0 && lambda.is_finite(), Config, "ridge λ must be positive, got {lambda}");
    ensure!(
        features.nrows() == targets.nrows(),
        Dimension,
        "{} feature rows vs {} target rows",
        features.nrows(),
        targets.nrows()
    );
    let p = features.ncols();
    let gram = features.transpose() * features + DMatrix::<f64>::identity(p, p) * lambda;
    let rhs = features.transpose() * targets;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Conditioning("normal matrix is not positive definite".into()))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if !(lo > 0.0) || (lo / hi) * (lo / hi) < PIVOT_RATIO_TOL {
        return Err(Error::Conditioning(format!(
            "Cholesky pivots span {lo:e} to {hi:e}; increase λ"
        )));
    }
    let sol = chol.solve(&rhs);
    ensure!(sol.iter().all(|v| v.is_finite()), Numeric, "ridge solution is not finite");
    Ok(sol)
}

/// Design matrix with a trailing constant column for the intercept.
fn design(features: &[Vec<f32>]) -> Result<DMatrix<f64>> {
    ensure!(!features.is_empty(), Validation, "no training samples");
    let p = features[0].len();
    ensure!(features.iter().all(|f| f.len() == p), Dimension, "ragged feature rows");
    Ok(DMatrix::from_fn(features.len(), p + 1, |r, c| {
        if c == p {
            1.0
        } else {
            features[r][c] as f64
        }
    }))
}

/// Fits `argmax(W·f + b)` to one-hot ±1 targets. The intercept is
/// regularized together with the weights.
pub fn fit_readout(
    features: &[Vec<f32>],
    labels: &[u32],
    n_classes: usize,
    spec: &RidgeSpec,
) -> Result<ClassifierHead> {
    ensure!(features.len() == labels.len(), Dimension, "{} feature rows vs {} labels", features.len(), labels.len());
    ensure!(n_classes >= 1, Validation, "need at least one class");
    if let Some(bad) = labels.iter().find(|&&y| y as usize >= n_classes) {
        return Err(Error::Validation(format!("label {bad} outside [0, {n_classes})")));
    }
    let f = design(features)?;
    let y = DMatrix::from_fn(labels.len(), n_classes, |r, c| if labels[r] as usize == c { 1.0 } else { -1.0 });
    let b = ridge_solve(&f, &y, spec.lambda)?;
    let p = f.ncols() - 1;
    let mut w = Vec::with_capacity(n_classes * p);
    for c in 0..n_classes {
        w.extend((0..p).map(|k| b[(k, c)] as f32));
    }
    let bias: Vec<f32> = (0..n_classes).map(|c| b[(p, c)] as f32).collect();
    ClassifierHead::new(DenseTensor::matrix(n_classes, p, w)?, DenseTensor::vector(bias)?, spec.feature)
}

/// Settings of [`train_pipeline`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineSpec {
    /// Seeds both the weight initialization and the train/held-out split.
    pub seed: u64,
    pub n_hidden: usize,
    pub train_fraction: f64,
    pub ridge: RidgeSpec,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        Self { seed: 0, n_hidden: 32, train_fraction: 0.8, ridge: RidgeSpec::default() }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: LstmParams,
    pub head: ClassifierHead,
    pub train_accuracy: f64,
    pub heldout_accuracy: f64,
}

/// Uniform(−r, r) weights and biases with `r = 1/sqrt(N_h)`.
pub fn init_params(n_input: usize, n_hidden: usize, seed: u64) -> LstmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = 1.0 / (n_hidden as f32).sqrt();
    LstmParams::random(n_input, n_hidden, r, &mut rng)
}

/// Seed stream for the split, kept apart from the initialization stream.
pub fn split_seed(seed: u64) -> u64 {
    ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed).gen()
}

/// Splits `data`, extracts features with `params` (or a fresh random
/// initialization), fits the head on the training part and scores both parts.
pub fn train_pipeline(
    params: Option<LstmParams>,
    data: &Dataset,
    spec: &PipelineSpec,
    workers: Workers,
) -> Result<TrainOutcome> {
    let labels = data.require_labels()?;
    ensure!(!labels.is_empty(), Validation, "empty dataset");
    let params = match params {
        Some(p) => p,
        None => init_params(data.features(), spec.n_hidden, spec.seed),
    };
    let (train, test) = data.split(split_seed(spec.seed), spec.train_fraction)?;
    let feats = extract_features(&params, &train, spec.ridge.feature, workers)?;
    let head = fit_readout(&feats, train.require_labels()?, data.n_classes(), &spec.ridge)?;
    let train_accuracy = evaluate_accuracy(&params, &head, &train, workers)?;
    let heldout_accuracy = evaluate_accuracy(&params, &head, &test, workers)?;
    Ok(TrainOutcome { params, head, train_accuracy, heldout_accuracy })
}

/// Residual of the normal equations, `‖(FᵀF+λI)B − FᵀY‖∞ / ‖FᵀY‖∞`.
pub fn normal_equation_residual(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    lambda: f64,
    solution: &DMatrix<f64>,
) -> f64 {
    let p = features.ncols();
    let gram = features.transpose() * features + DMatrix::<f64>::identity(p, p) * lambda;
    let rhs = features.transpose() * targets;
    let r = &gram * solution - &rhs;
    let norm = |m: &DMatrix<f64>| m.iter().fold(0f64, |a, v| a.max(v.abs()));
    norm(&r) / norm(&rhs).max(f64::MIN_POSITIVE)
}

/// Convenience for single-output problems.
pub fn ridge_solve_vector(features: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let y = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    Ok(ridge_solve(features, &y, lambda)?.column(0).into_owned())
}
