//! The round loop: sample clients, train locally, aggregate through a
//! defense, evaluate.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;

use crate::analysis;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::fed::client::ClientState;
use crate::fed::config::FederationConfig;
use crate::fed::record::{RecordSink, RoundRecord};
use crate::nn::{train_local, Classifier, FlatParams};
use crate::seeding::{self, STREAM_SAMPLE, STREAM_TRAIN};

/// Uniform sample without replacement of `sampled_per_round` client ids,
/// seeded by `(cfg.seed, round)`. Banned clients are never drawn; if bans
/// shrink the pool below the sample size, the whole pool is taken.
pub fn sample_clients(
    cfg: &FederationConfig,
    round: usize,
    banned: &BTreeSet<usize>,
) -> Vec<usize> {
    let eligible: Vec<usize> =
        (0..cfg.total_clients).filter(|c| !banned.contains(c)).collect();
    let take = cfg.sampled_per_round.min(eligible.len());
    if take < cfg.sampled_per_round {
        log::warn!(
            "round {round}: only {} eligible clients for a sample of {}",
            eligible.len(),
            cfg.sampled_per_round
        );
    }
    let mut rng = seeding::rng(seeding::mix3(cfg.seed, STREAM_SAMPLE, round as u64));
    let picked = rand::seq::index::sample(&mut rng, eligible.len(), take);
    let mut ids: Vec<usize> = picked.into_iter().map(|i| eligible[i]).collect();
    ids.sort_unstable();
    ids
}

/// Unweighted mean of parameter vectors.
pub fn fedavg(updates: &[&FlatParams]) -> Result<FlatParams> {
    let first = updates
        .first()
        .ok_or_else(|| Error::invalid("fedavg over zero updates"))?;
    let dim = first.len();
    let mut acc = vec![0.0f64; dim];
    for u in updates {
        if u.len() != dim {
            return Err(Error::shape(format!(
                "update lengths differ: {} vs {dim}",
                u.len()
            )));
        }
        for (a, v) in acc.iter_mut().zip(u.values()) {
            *a += *v as f64;
        }
    }
    let inv = 1.0 / updates.len() as f64;
    Ok(FlatParams::from_vec(acc.into_iter().map(|v| (v * inv) as crate::Real).collect()))
}

/// What a defense sees each round.
pub struct RoundInput<'a> {
    /// 1-based round index.
    pub round: usize,
    /// Global model the clients started from.
    pub global: &'a Classifier,
    /// Submitted parameter vectors keyed by client id.
    pub updates: &'a BTreeMap<usize, FlatParams>,
}

/// What a defense returns.
pub struct DefenseVerdict {
    /// The next global parameters.
    pub params: FlatParams,
    /// Clients whose updates were aggregated, ascending.
    pub kept: Vec<usize>,
    /// Sampled clients excluded from aggregation this round, ascending.
    pub excluded: Vec<usize>,
    /// Whether a distillation pass ran.
    pub distilled: bool,
}

/// An aggregation rule, possibly stateful across rounds.
pub trait Defense {
    fn name(&self) -> &'static str;
    fn process(&mut self, input: &RoundInput) -> Result<DefenseVerdict>;
    /// Clients permanently banned from sampling.
    fn banned(&self) -> BTreeSet<usize> {
        BTreeSet::new()
    }
}

/// A full simulated federation with its evaluation sets.
pub struct Federation {
    cfg: FederationConfig,
    clients: Vec<ClientState>,
    global: Classifier,
    test_clean: LabeledDataset,
    test_triggered: LabeledDataset,
    attack_target: usize,
    /// Scale malicious parameter deltas before submission; 1 submits the
    /// honest training result of the poisoned data.
    malicious_scale: f64,
}

impl Federation {
    pub fn new(
        cfg: FederationConfig,
        clients: Vec<ClientState>,
        global: Classifier,
        test_clean: LabeledDataset,
        test_triggered: LabeledDataset,
        attack_target: usize,
        malicious_scale: f64,
    ) -> Result<Federation> {
        cfg.validate()?;
        if clients.len() != cfg.total_clients {
            return Err(Error::invalid(format!(
                "{} client states for a federation of {}",
                clients.len(),
                cfg.total_clients
            )));
        }
        for (i, c) in clients.iter().enumerate() {
            if c.id != i {
                return Err(Error::invalid("client ids must be 0..N in order"));
            }
        }
        if !malicious_scale.is_finite() {
            return Err(Error::invalid("malicious update scale must be finite"));
        }
        Ok(Federation {
            cfg,
            clients,
            global,
            test_clean,
            test_triggered,
            attack_target,
            malicious_scale,
        })
    }

    pub fn cfg(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn global(&self) -> &Classifier {
        &self.global
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    /// Runs one round through the given defense and returns its record.
    pub fn run_round(&mut self, defense: &mut dyn Defense, round: usize) -> Result<RoundRecord> {
        let started = Instant::now();
        let banned = defense.banned();
        let sampled = sample_clients(&self.cfg, round, &banned);
        if sampled.is_empty() {
            return Err(Error::invalid(format!(
                "round {round}: no clients left to sample"
            )));
        }

        let round_seed = seeding::mix3(self.cfg.seed, STREAM_TRAIN, round as u64);
        let trained: Vec<(usize, FlatParams)> = sampled
            .par_iter()
            .map(|id| -> Result<(usize, FlatParams)> {
                let client = &self.clients[*id];
                let seed = seeding::mix3(round_seed, STREAM_TRAIN, *id as u64);
                let model = train_local(&self.global, &client.data, &self.cfg.training, seed)?;
                let mut params = model.params().clone();
                if client.is_malicious && self.malicious_scale != 1.0 {
                    params.rescale_around(self.global.params(), self.malicious_scale)?;
                }
                Ok((*id, params))
            })
            .collect::<Result<_>>()?;
        let updates: BTreeMap<usize, FlatParams> = trained.into_iter().collect();

        let verdict = defense.process(&RoundInput {
            round,
            global: &self.global,
            updates: &updates,
        })?;
        self.global = Classifier::with_params(self.global.arch().clone(), verdict.params)?;

        let mta = analysis::mta(&self.global, &self.test_clean)?;
        let asr = analysis::asr(&self.global, &self.test_triggered, self.attack_target)?;
        let malicious_in_sample =
            sampled.iter().filter(|id| self.clients[**id].is_malicious).count();
        Ok(RoundRecord {
            round,
            mta,
            asr,
            sampled,
            malicious_in_sample,
            benign: verdict.kept,
            excluded: verdict.excluded,
            distilled: verdict.distilled,
            wall_ms: started.elapsed().as_millis() as u64,
        })
    }

    /// Runs the configured number of rounds, streaming records into the
    /// sink as they complete.
    pub fn run_experiment(
        &mut self,
        defense: &mut dyn Defense,
        sink: &mut dyn RecordSink,
    ) -> Result<Vec<RoundRecord>> {
        let mut records = Vec::with_capacity(self.cfg.rounds);
        for round in 1..=self.cfg.rounds {
            let rec = self.run_round(defense, round)?;
            sink.record(&rec)?;
            records.push(rec);
        }
        Ok(records)
    }
}
