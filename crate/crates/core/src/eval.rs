//! Batch feature extraction and accuracy evaluation over a dataset.

use crate::data::Dataset;
use crate::error::{ensure, Result};
use crate::lstm::{argmax, sequence_features, Cell, ClassifierHead, FeatureSource};
use crate::par::{self, Workers};

/// One feature vector per sample, in sample order.
pub fn extract_features<C: Cell + ?Sized>(
    cell: &C,
    data: &Dataset,
    source: FeatureSource,
    workers: Workers,
) -> Result<Vec<Vec<f32>>> {
    ensure!(
        data.features() == cell.n_input(),
        Dimension,
        "dataset has {} features, model expects {}",
        data.features(),
        cell.n_input()
    );
    par::map_range(data.samples(), workers, |s| sequence_features(cell, data.sample(s), source))
        .into_iter()
        .collect()
}

pub fn predict<C: Cell + ?Sized>(
    cell: &C,
    head: &ClassifierHead,
    data: &Dataset,
    workers: Workers,
) -> Result<Vec<usize>> {
    extract_features(cell, data, head.feature, workers)?
        .iter()
        .map(|f| head.logits(f).map(|l| argmax(&l)))
        .collect()
}

/// Fraction of samples whose predicted class matches the label.
pub fn evaluate_accuracy<C: Cell + ?Sized>(
    cell: &C,
    head: &ClassifierHead,
    data: &Dataset,
    workers: Workers,
) -> Result<f64> {
    let counts = class_counts(cell, head, data, workers)?;
    let (hit, total) = counts.iter().fold((0, 0), |(h, t), c| (h + c.0, t + c.1));
    Ok(hit as f64 / total as f64)
}

/// `(correct, total)` per class.
pub fn class_counts<C: Cell + ?Sized>(
    cell: &C,
    head: &ClassifierHead,
    data: &Dataset,
    workers: Workers,
) -> Result<Vec<(usize, usize)>> {
    let labels = data.require_labels()?;
    ensure!(!labels.is_empty(), Validation, "cannot evaluate on an empty dataset");
    ensure!(
        data.n_classes() <= head.n_classes(),
        Validation,
        "dataset has {} classes, head only {}",
        data.n_classes(),
        head.n_classes()
    );
    let pred = predict(cell, head, data, workers)?;
    let mut counts = vec![(0usize, 0usize); data.n_classes()];
    for (&y, &p) in labels.iter().zip(&pred) {
        let c = &mut counts[y as usize];
        c.1 += 1;
        if p == y as usize {
            c.0 += 1;
        }
    }
    Ok(counts)
}
