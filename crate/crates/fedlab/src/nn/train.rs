//! Local SGD training and the losses used by aggregation and distillation.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::network::{backward, forward_trace, Classifier};
use crate::seeding;
use crate::Real;

/// Hyperparameters for one client's local training pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::config(format!(
                "training.lr must be positive and finite, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("training.batch_size must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("training.epochs must be positive"));
        }
        Ok(())
    }
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
/// Uses the max-shifted log-sum-exp form, so large logits stay finite.
pub fn softmax_xent(logits: &Array2<Real>, labels: &[usize]) -> Result<(f64, Array2<Real>)> {
    let batch = logits.nrows();
    if batch == 0 {
        return Err(Error::invalid("cross entropy over an empty batch"));
    }
    if labels.len() != batch {
        return Err(Error::shape(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    let classes = logits.ncols();
    let mut grad = Array2::<Real>::zeros(logits.dim());
    let mut loss = 0.0f64;
    let inv_b = 1.0 / batch as f64;
    for (r, row) in logits.rows().into_iter().enumerate() {
        let label = labels[r];
        if label >= classes {
            return Err(Error::invalid(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let m = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
        let mut denom = 0.0f64;
        for v in row.iter() {
            denom += ((*v - m) as f64).exp();
        }
        let lse = m as f64 + denom.ln();
        loss += (lse - row[label] as f64) * inv_b;
        for (c, v) in row.iter().enumerate() {
            let p = ((*v - m) as f64).exp() / denom;
            let target = if c == label { 1.0 } else { 0.0 };
            grad[[r, c]] = ((p - target) * inv_b) as Real;
        }
    }
    Ok((loss, grad))
}

/// Trains a copy of `model` on `data` with plain SGD and returns it.
/// Batch order is shuffled per epoch from the given seed. A zero learning
/// rate is allowed and returns the parameters unchanged.
pub fn train_local(
    model: &Classifier,
    data: &LabeledDataset,
    cfg: &TrainingConfig,
    seed: u64,
) -> Result<Classifier> {
    if data.len() == 0 {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if data.inputs.ncols() != model.arch().input_dim() {
        return Err(Error::shape(format!(
            "dataset has {} features, model expects {}",
            data.inputs.ncols(),
            model.arch().input_dim()
        )));
    }
    if !cfg.lr.is_finite() || cfg.lr < 0.0 {
        return Err(Error::invalid(format!("learning rate {} is not usable", cfg.lr)));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let classes = model.num_classes();
    if let Some(bad) = data.labels.iter().find(|l| **l >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }

    let mut rng = seeding::rng(seed);
    let arch = model.arch().clone();
    let mut params = model.params().clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let lr = cfg.lr;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.gather_inputs(chunk);
            let labels: Vec<usize> = chunk.iter().map(|i| data.labels[*i]).collect();
            let trace = forward_trace(&arch, &params, &batch)?;
            let (_, grad_logits) = softmax_xent(trace.output(), &labels)?;
            let (grads, _) = backward(&arch, &params, &trace, &grad_logits)?;
            for (p, g) in params.values_mut().iter_mut().zip(&grads) {
                *p -= (lr * *g as f64) as Real;
            }
        }
    }
    Classifier::with_params(arch, params)
}

/// Mean over the batch of the summed absolute logit differences.
pub fn l1_logit_loss(a: &Array2<Real>, b: &Array2<Real>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "logit shapes differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    if a.nrows() == 0 {
        return Err(Error::invalid("l1 logit loss over an empty batch"));
    }
    let total: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .sum();
    Ok(total / a.nrows() as f64)
}

/// [`l1_logit_loss`] plus its (sub)gradient w.r.t. the first argument.
pub fn l1_logit_grad(
    student: &Array2<Real>,
    teacher: &Array2<Real>,
) -> Result<(f64, Array2<Real>)> {
    let loss = l1_logit_loss(student, teacher)?;
    let inv_b = 1.0 / student.nrows() as f64;
    let grad = ndarray::Zip::from(student)
        .and(teacher)
        .map_collect(|&s, &t| {
            let d = s as f64 - t as f64;
            if d > 0.0 {
                inv_b as Real
            } else if d < 0.0 {
                -(inv_b as Real)
            } else {
                0.0
            }
        });
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::nn::network::Arch;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn xent_of_uniform_logits_is_log_classes() {
        let logits = Array2::<Real>::zeros((4, 10));
        let labels = vec![0, 3, 7, 9];
        let (loss, _) = softmax_xent(&logits, &labels).unwrap();
        assert!((loss - (10.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn xent_grad_matches_finite_differences() {
        let mut rng = crate::seeding::rng(4);
        let mut logits = Array2::<Real>::zeros((3, 5));
        for v in logits.iter_mut() {
            *v = rng.random_range(-2.0..2.0);
        }
        let labels = vec![1, 4, 0];
        let (_, grad) = softmax_xent(&logits, &labels).unwrap();
        let eps = 1e-5;
        for r in 0..3 {
            for c in 0..5 {
                let mut hi = logits.clone();
                hi[[r, c]] += eps as Real;
                let mut lo = logits.clone();
                lo[[r, c]] -= eps as Real;
                let (lh, _) = softmax_xent(&hi, &labels).unwrap();
                let (ll, _) = softmax_xent(&lo, &labels).unwrap();
                let num = (lh - ll) / (2.0 * eps);
                assert!(
                    (num - grad[[r, c]] as f64).abs() < 1e-4,
                    "({r},{c}): fd {num} vs analytic {}",
                    grad[[r, c]]
                );
            }
        }
    }

    #[test]
    fn zero_lr_returns_identical_params() {
        let data = synth_blobs(3, 8, 20, 0.05, 1).unwrap();
        let model = Classifier::new(Arch::mlp(8, 16, 3).unwrap(), 2);
        let cfg = TrainingConfig { lr: 0.0, batch_size: 8, epochs: 2 };
        let trained = train_local(&model, &data, &cfg, 3).unwrap();
        assert_eq!(trained.params(), model.params());
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let data = synth_blobs(3, 8, 20, 0.05, 1).unwrap();
        let model = Classifier::new(Arch::mlp(8, 16, 3).unwrap(), 2);
        let cfg = TrainingConfig { lr: 0.1, batch_size: 8, epochs: 2 };
        let a = train_local(&model, &data, &cfg, 3).unwrap();
        let b = train_local(&model, &data, &cfg, 3).unwrap();
        let c = train_local(&model, &data, &cfg, 4).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn separable_blobs_train_to_high_accuracy() {
        let data = synth_blobs(4, 16, 40, 0.03, 7).unwrap();
        let model = Classifier::new(Arch::mlp(16, 32, 4).unwrap(), 8);
        let cfg = TrainingConfig { lr: 0.5, batch_size: 16, epochs: 5 };
        let trained = train_local(&model, &data, &cfg, 9).unwrap();
        let preds = trained.predict(&data.inputs).unwrap();
        let correct = preds
            .iter()
            .zip(&data.labels)
            .filter(|(p, l)| p == l)
            .count();
        let acc = correct as f64 / data.len() as f64;
        assert!(acc >= 0.95, "train accuracy {acc}");
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let data = LabeledDataset::new(Array2::<Real>::zeros((4, 8)), vec![0, 1, 2, 5], 6).unwrap();
        let model = Classifier::new(Arch::mlp(8, 4, 3).unwrap(), 2);
        let cfg = TrainingConfig { lr: 0.1, batch_size: 2, epochs: 1 };
        assert!(train_local(&model, &data, &cfg, 0).is_err());
    }

    #[test]
    fn l1_loss_examples() {
        let a = array![[1.0 as Real, 2.0], [0.0, 0.0]];
        let b = array![[0.0 as Real, 2.0], [0.0, -3.0]];
        assert!((l1_logit_loss(&a, &b).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(l1_logit_loss(&a, &a).unwrap(), 0.0);
        let tall = Array2::<Real>::zeros((3, 2));
        assert!(l1_logit_loss(&a, &tall).is_err());
    }

    #[test]
    fn l1_grad_is_scaled_sign() {
        let s = array![[2.0 as Real, -1.0], [0.5, 0.5]];
        let t = array![[1.0 as Real, 0.0], [0.5, 2.0]];
        let (loss, g) = l1_logit_grad(&s, &t).unwrap();
        assert!((loss - (1.0 + 1.0 + 0.0 + 1.5) / 2.0).abs() < 1e-12);
        assert_eq!(g, array![[0.5 as Real, -0.5], [0.0, -0.5]]);
    }
}
