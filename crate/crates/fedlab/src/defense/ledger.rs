//! Activity monitoring: a penalty ledger over client ids.
//!
//! Suspect-cluster membership adds a penalty, benign-cluster membership
//! earns a reward that can only pay the score down to zero. Clients not
//! sampled this round keep their score. Aggregation only admits clients
//! whose score is exactly zero.

use std::collections::{BTreeMap, BTreeSet};

use crate::defense::cluster::ClusterSplit;

/// Per-client penalty scores plus the monitoring constants.
#[derive(Clone, Debug, PartialEq)]
pub struct PenaltyLedger {
    scores: BTreeMap<usize, f64>,
    banned: BTreeSet<usize>,
    /// Added to a client's score on a suspect round.
    pub penalty: f64,
    /// Subtracted (floored at zero) on a benign round.
    pub reward: f64,
    /// Permanent-ban threshold; `None` disables banning.
    pub ban_threshold: Option<f64>,
}

impl PenaltyLedger {
    pub fn new(penalty: f64, reward: f64, ban_threshold: Option<f64>) -> Self {
        PenaltyLedger {
            scores: BTreeMap::new(),
            banned: BTreeSet::new(),
            penalty,
            reward,
            ban_threshold,
        }
    }

    /// Current score of a client; unseen clients score zero.
    pub fn score(&self, client: usize) -> f64 {
        self.scores.get(&client).copied().unwrap_or(0.0)
    }

    pub fn banned(&self) -> &BTreeSet<usize> {
        &self.banned
    }

    pub fn is_banned(&self, client: usize) -> bool {
        self.banned.contains(&client)
    }

    /// Clients with a nonzero score, for inspection.
    pub fn flagged(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.scores.iter().filter(|(_, s)| **s > 0.0).map(|(c, s)| (*c, *s))
    }
}

/// Applies one round's cluster verdict: suspects gain `penalty`, benign
/// members shed `reward` down to zero, everyone else is untouched. With
/// banning enabled, a score at or above the threshold bans the client for
/// the rest of the run.
pub fn update_ledger(ledger: &PenaltyLedger, split: &ClusterSplit) -> PenaltyLedger {
    let mut next = ledger.clone();
    for c in &split.suspects {
        let s = next.score(*c) + next.penalty;
        next.scores.insert(*c, s);
        if let Some(threshold) = next.ban_threshold {
            if s >= threshold && next.banned.insert(*c) {
                log::info!("client {c} banned at penalty score {s}");
            }
        }
    }
    for c in &split.benign {
        let s = (next.score(*c) - next.reward).max(0.0);
        next.scores.insert(*c, s);
    }
    next
}

/// Aggregation set for this round: benign-cluster members whose score is
/// zero. If the penalty history empties the set, the benign member with
/// the lowest score (ties to the lowest id) is kept so the round can
/// still aggregate.
pub fn filter_by_ledger(split: &ClusterSplit, ledger: &PenaltyLedger) -> Vec<usize> {
    let kept: Vec<usize> = split
        .benign
        .iter()
        .copied()
        .filter(|c| ledger.score(*c) <= 0.0)
        .collect();
    if !kept.is_empty() {
        return kept;
    }
    let fallback = split
        .benign
        .iter()
        .copied()
        .min_by(|a, b| {
            ledger
                .score(*a)
                .partial_cmp(&ledger.score(*b))
                .expect("finite scores")
                .then(a.cmp(b))
        });
    match fallback {
        Some(c) => {
            log::warn!(
                "every benign-cluster client carries penalties; falling back to client {c}"
            );
            vec![c]
        }
        None => Vec::new(),
    }
}
