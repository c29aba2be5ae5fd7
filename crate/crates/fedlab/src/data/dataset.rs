//! Labeled datasets and the synthetic blob generator used for fast tests.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seeding::{self, STREAM_DATA, STREAM_SPLIT};
use crate::Real;

/// A dense feature matrix with one integer label per row. Feature values
/// live in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Array2<Real>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(inputs: Array2<Real>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::invalid("dataset needs at least one class"));
        }
        if let Some(bad) = labels.iter().find(|l| **l >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabeledDataset { inputs, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature count per sample.
    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Copies the given rows into a new dataset, in the given order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            inputs: self.gather_inputs(indices),
            labels: indices.iter().map(|i| self.labels[*i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Copies the given rows into a batch matrix.
    pub fn gather_inputs(&self, indices: &[usize]) -> Array2<Real> {
        let mut out = Array2::<Real>::zeros((indices.len(), self.dim()));
        for (r, i) in indices.iter().enumerate() {
            out.row_mut(r).assign(&self.inputs.row(*i));
        }
        out
    }

    /// Row indices carrying the given label, in dataset order.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == class)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Samples well-separated Gaussian blobs in the unit cube, one blob per
/// class, `per_class` samples each. Values are clipped to `[0, 1]`.
pub fn synth_blobs(
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 {
        return Err(Error::invalid("blob generator needs at least two classes"));
    }
    if dim == 0 || per_class == 0 {
        return Err(Error::invalid("blob dimension and per-class count must be positive"));
    }
    if !spread.is_finite() || spread < 0.0 {
        return Err(Error::invalid(format!("blob spread {spread} is not usable")));
    }

    let mut rng = seeding::rng(seeding::mix2(seed, STREAM_DATA));
    let mut separation = 0.15 * (dim as f64).sqrt();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while centroids.len() < classes {
        let mut placed = false;
        for _ in 0..200 {
            let cand: Vec<f64> = (0..dim).map(|_| rng.random_range(0.2..0.8)).collect();
            let ok = centroids.iter().all(|c| {
                let d2: f64 = c.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() >= separation
            });
            if ok {
                centroids.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            // Crowded configuration; relax the spacing requirement and retry.
            separation *= 0.9;
        }
    }

    let noise = if spread > 0.0 {
        Some(Normal::new(0.0, spread).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    let mut inputs = Array2::<Real>::zeros((classes * per_class, dim));
    let mut labels = Vec::with_capacity(classes * per_class);
    for (k, centroid) in centroids.iter().enumerate() {
        for s in 0..per_class {
            let r = k * per_class + s;
            for (j, c) in centroid.iter().enumerate() {
                let v = match &noise {
                    Some(n) => (c + n.sample(&mut rng)).clamp(0.0, 1.0),
                    None => *c,
                };
                inputs[[r, j]] = v as Real;
            }
            labels.push(k);
        }
    }
    LabeledDataset::new(inputs, labels, classes)
}

/// Stratified split into train and test parts. Each class contributes
/// `round(test_fraction * count)` samples (at least one when the fraction
/// is positive) to the test side, chosen by seeded shuffle.
pub fn split_train_test(
    data: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid(format!(
            "test fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for k in 0..data.num_classes {
        let mut idxs = data.class_indices(k);
        if idxs.is_empty() {
            continue;
        }
        let mut rng = seeding::rng(seeding::mix3(seed, STREAM_SPLIT, k as u64));
        idxs.shuffle(&mut rng);
        let mut n_test = (test_fraction * idxs.len() as f64 + 0.5).floor() as usize;
        if test_fraction > 0.0 {
            n_test = n_test.clamp(1, idxs.len().saturating_sub(1).max(1));
        }
        test_idx.extend_from_slice(&idxs[..n_test]);
        train_idx.extend_from_slice(&idxs[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((data.subset(&train_idx), data.subset(&test_idx)))
}

/// Writes the dataset as CSV with columns `x0..x{d-1},label`.
pub fn export_csv(data: &LabeledDataset, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = (0..data.dim())
        .map(|j| format!("x{j}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (row, label) in data.inputs.rows().into_iter().zip(&data.labels) {
        let mut fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        fields.push(label.to_string());
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}
