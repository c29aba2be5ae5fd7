//! Dirichlet partitioning of a dataset across federation clients.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use crate::data::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::seeding::{self, STREAM_PARTITION};

/// Per-client row indices into the source dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionPlan {
    pub assignments: Vec<Vec<usize>>,
    pub alpha: f64,
}

impl PartitionPlan {
    pub fn clients(&self) -> usize {
        self.assignments.len()
    }
}

/// Splits sample indices across `clients`. For each class, client shares
/// are drawn from a symmetric Dirichlet with concentration `alpha`
/// (gamma draws, normalized) and turned into integer counts by largest
/// remainder. `alpha = inf` means equal shares, i.e. an IID split.
pub fn partition(
    data: &LabeledDataset,
    clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<PartitionPlan> {
    if clients == 0 {
        return Err(Error::invalid("partition needs at least one client"));
    }
    if data.is_empty() {
        return Err(Error::invalid("cannot partition an empty dataset"));
    }
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::invalid(format!(
            "dirichlet alpha must be positive or inf, got {alpha}"
        )));
    }

    let mut assignments = vec![Vec::new(); clients];
    for k in 0..data.num_classes {
        let mut idxs = data.class_indices(k);
        if idxs.is_empty() {
            continue;
        }
        let mut rng = seeding::rng(seeding::mix3(seed, STREAM_PARTITION, k as u64));
        idxs.shuffle(&mut rng);

        let proportions = if alpha.is_infinite() {
            vec![1.0 / clients as f64; clients]
        } else {
            let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
            let draws: Vec<f64> = (0..clients).map(|_| gamma.sample(&mut rng)).collect();
            let sum: f64 = draws.iter().sum();
            if sum > 0.0 && sum.is_finite() {
                draws.into_iter().map(|g| g / sum).collect()
            } else {
                // Extreme alpha underflowed every draw; fall back to equal shares.
                log::warn!("dirichlet draws degenerate for alpha {alpha}, using equal shares");
                vec![1.0 / clients as f64; clients]
            }
        };

        let counts = largest_remainder(&proportions, idxs.len());
        let mut offset = 0;
        for (c, count) in counts.into_iter().enumerate() {
            assignments[c].extend_from_slice(&idxs[offset..offset + count]);
            offset += count;
        }
    }
    for a in &mut assignments {
        a.sort_unstable();
    }
    Ok(PartitionPlan { assignments, alpha })
}

/// Rounds fractional quotas to integers summing to `total`: floor every
/// quota, then hand remaining units to the largest fractional parts,
/// lower index first on ties.
fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = Vec::with_capacity(proportions.len());
    let mut fractions: Vec<(usize, f64)> = Vec::with_capacity(proportions.len());
    let mut assigned = 0;
    for (i, p) in proportions.iter().enumerate() {
        let quota = p * total as f64;
        let base = quota.floor() as usize;
        counts.push(base);
        assigned += base;
        fractions.push((i, quota - base as f64));
    }
    fractions.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in fractions.into_iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}
