//! Attack and defense metrics: main-task accuracy, attack success rate,
//! and the round-consistency statistic.

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::fed::RoundRecord;
use crate::nn::Classifier;

/// Main-task accuracy: fraction of clean test samples classified
/// correctly.
pub fn mta(model: &Classifier, test: &LabeledDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("accuracy over an empty test set"));
    }
    let preds = model.predict(&test.inputs)?;
    let correct = preds.iter().zip(&test.labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / test.len() as f64)
}

/// Attack success rate: fraction of triggered victim-class samples the
/// model sends to the attacker's target class.
pub fn asr(model: &Classifier, triggered: &LabeledDataset, target: usize) -> Result<f64> {
    if triggered.is_empty() {
        return Err(Error::invalid("attack success rate over an empty set"));
    }
    let preds = model.predict(&triggered.inputs)?;
    let hits = preds.iter().filter(|p| **p == target).count();
    Ok(hits as f64 / triggered.len() as f64)
}

/// The consistency statistic over a finished run: restrict to rounds
/// whose MTA reaches `lambda`, then take the minimum ASR among them. An
/// attack holds up under scrutiny only if even that minimum stays high.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsistencyStat {
    pub lambda: f64,
    /// Rounds with `mta >= lambda`.
    pub qualifying_rounds: usize,
    /// Minimum ASR over qualifying rounds; `None` when no round qualifies.
    pub min_asr: Option<f64>,
}

impl ConsistencyStat {
    /// Whether the attack clears `tau` in every qualifying round.
    /// `None` when no round qualified.
    pub fn attack_consistent(&self, tau: f64) -> Option<bool> {
        self.min_asr.map(|m| m >= tau)
    }
}

pub fn consistency_stat(records: &[RoundRecord], lambda: f64) -> ConsistencyStat {
    let mut qualifying = 0;
    let mut min_asr: Option<f64> = None;
    for r in records {
        if r.mta >= lambda {
            qualifying += 1;
            min_asr = Some(match min_asr {
                Some(m) => m.min(r.asr),
                None => r.asr,
            });
        }
    }
    ConsistencyStat { lambda, qualifying_rounds: qualifying, min_asr }
}
