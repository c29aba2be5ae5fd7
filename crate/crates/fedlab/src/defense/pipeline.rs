//! The full defense pipelines and the `Defense` adapters used by the
//! round loop.
//!
//! The heavyweight pipeline clusters updates, applies the penalty ledger,
//! averages the survivors, and periodically distills the aggregate
//! against the surviving client models. The lightweight variant skips
//! distillation and keeps everything else.

use std::collections::{BTreeMap, BTreeSet};

use crate::defense::baselines::{multi_krum, KrumParams};
use crate::defense::cluster::{cluster_updates, ClusterSplit};
use crate::defense::distill::{distill, DistillConfig};
use crate::defense::ledger::{filter_by_ledger, update_ledger, PenaltyLedger};
use crate::error::Result;
use crate::fed::{fedavg, Defense, DefenseVerdict, RoundInput};
use crate::nn::{Classifier, FlatParams, Generator};
use crate::seeding::{self, STREAM_DISTILL};

/// Result of one pipeline invocation.
pub struct PipelineOutcome {
    pub params: FlatParams,
    pub ledger: PenaltyLedger,
    pub split: ClusterSplit,
    /// Clients whose updates were actually averaged.
    pub kept: Vec<usize>,
    pub distilled: bool,
}

/// Cluster, monitor, filter, average. No distillation.
pub fn droplet_pipeline(
    updates: &BTreeMap<usize, FlatParams>,
    ledger: &PenaltyLedger,
) -> Result<PipelineOutcome> {
    let split = cluster_updates(updates)?;
    let next_ledger = update_ledger(ledger, &split);
    let kept = filter_by_ledger(&split, &next_ledger);
    let refs: Vec<&FlatParams> = kept.iter().map(|id| &updates[id]).collect();
    let params = fedavg(&refs)?;
    Ok(PipelineOutcome { params, ledger: next_ledger, split, kept, distilled: false })
}

/// The full pipeline: cluster, monitor, filter, average, and on scheduled
/// rounds distill the aggregate against the surviving client models.
#[allow(clippy::too_many_arguments)]
pub fn drop_pipeline(
    updates: &BTreeMap<usize, FlatParams>,
    ledger: &PenaltyLedger,
    global: &Classifier,
    generator: &Generator,
    cfg: &DistillConfig,
    round: usize,
    seed: u64,
) -> Result<(PipelineOutcome, Generator)> {
    let mut outcome = droplet_pipeline(updates, ledger)?;
    if !cfg.due(round) {
        return Ok((outcome, generator.clone()));
    }
    let arch = global.arch().clone();
    let aggregated = Classifier::with_params(arch.clone(), outcome.params.clone())?;
    let ensemble: Vec<Classifier> = outcome
        .kept
        .iter()
        .map(|id| Classifier::with_params(arch.clone(), updates[id].clone()))
        .collect::<Result<_>>()?;
    let distill_seed = seeding::mix3(seed, STREAM_DISTILL, round as u64);
    let (clone, next_gen) = distill(&aggregated, &ensemble, generator, cfg, distill_seed)?;
    outcome.params = clone.params().clone();
    outcome.distilled = true;
    Ok((outcome, next_gen))
}

fn verdict_from(outcome: PipelineOutcome, input: &RoundInput) -> DefenseVerdict {
    let kept_set: BTreeSet<usize> = outcome.kept.iter().copied().collect();
    let excluded: Vec<usize> =
        input.updates.keys().copied().filter(|id| !kept_set.contains(id)).collect();
    DefenseVerdict {
        params: outcome.params,
        kept: outcome.kept,
        excluded,
        distilled: outcome.distilled,
    }
}

/// Plain unweighted FedAvg, the undefended reference.
pub struct FedAvgDefense;

impl Defense for FedAvgDefense {
    fn name(&self) -> &'static str {
        "fedavg"
    }

    fn process(&mut self, input: &RoundInput) -> Result<DefenseVerdict> {
        let refs: Vec<&FlatParams> = input.updates.values().collect();
        Ok(DefenseVerdict {
            params: fedavg(&refs)?,
            kept: input.updates.keys().copied().collect(),
            excluded: Vec::new(),
            distilled: false,
        })
    }
}

/// Coordinate-wise median aggregation.
pub struct MedianDefense;

impl Defense for MedianDefense {
    fn name(&self) -> &'static str {
        "median"
    }

    fn process(&mut self, input: &RoundInput) -> Result<DefenseVerdict> {
        let refs: Vec<&FlatParams> = input.updates.values().collect();
        Ok(DefenseVerdict {
            params: crate::defense::baselines::median_agg(&refs)?,
            kept: input.updates.keys().copied().collect(),
            excluded: Vec::new(),
            distilled: false,
        })
    }
}

/// Multi-Krum selection and averaging.
pub struct MultiKrumDefense {
    pub params: KrumParams,
}

impl Defense for MultiKrumDefense {
    fn name(&self) -> &'static str {
        "multikrum"
    }

    fn process(&mut self, input: &RoundInput) -> Result<DefenseVerdict> {
        let (params, kept) = multi_krum(input.updates, &self.params)?;
        let kept_set: BTreeSet<usize> = kept.iter().copied().collect();
        let excluded =
            input.updates.keys().copied().filter(|id| !kept_set.contains(id)).collect();
        Ok(DefenseVerdict { params, kept, excluded, distilled: false })
    }
}

/// Clustering plus penalty ledger, no distillation.
pub struct DropletDefense {
    ledger: PenaltyLedger,
}

impl DropletDefense {
    pub fn new(ledger: PenaltyLedger) -> Self {
        DropletDefense { ledger }
    }

    pub fn ledger(&self) -> &PenaltyLedger {
        &self.ledger
    }
}

impl Defense for DropletDefense {
    fn name(&self) -> &'static str {
        "droplet"
    }

    fn process(&mut self, input: &RoundInput) -> Result<DefenseVerdict> {
        let outcome = droplet_pipeline(input.updates, &self.ledger)?;
        self.ledger = outcome.ledger.clone();
        Ok(verdict_from(outcome, input))
    }

    fn banned(&self) -> BTreeSet<usize> {
        self.ledger.banned().clone()
    }
}

/// The full cluster/monitor/distill defense.
pub struct DropDefense {
    ledger: PenaltyLedger,
    generator: Generator,
    cfg: DistillConfig,
    seed: u64,
}

impl DropDefense {
    pub fn new(ledger: PenaltyLedger, generator: Generator, cfg: DistillConfig, seed: u64) -> Self {
        DropDefense { ledger, generator, cfg, seed }
    }

    pub fn ledger(&self) -> &PenaltyLedger {
        &self.ledger
    }
}

impl Defense for DropDefense {
    fn name(&self) -> &'static str {
        "drop"
    }

    fn process(&mut self, input: &RoundInput) -> Result<DefenseVerdict> {
        let (outcome, next_gen) = drop_pipeline(
            input.updates,
            &self.ledger,
            input.global,
            &self.generator,
            &self.cfg,
            input.round,
            self.seed,
        )?;
        self.ledger = outcome.ledger.clone();
        self.generator = next_gen;
        Ok(verdict_from(outcome, input))
    }

    fn banned(&self) -> BTreeSet<usize> {
        self.ledger.banned().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::nn::Arch;
    use crate::Real;

    fn fp(v: &[f64]) -> FlatParams {
        FlatParams::from_vec(v.iter().map(|x| *x as Real).collect())
    }

    fn map(entries: &[(usize, &[f64])]) -> BTreeMap<usize, FlatParams> {
        entries.iter().map(|(id, v)| (*id, fp(v))).collect()
    }

    #[test]
    fn identical_updates_aggregate_to_fedavg_of_all() {
        let updates = map(&[(0, &[1.0, 2.0]), (1, &[1.0, 2.0]), (2, &[1.0, 2.0]), (3, &[1.0, 2.0])]);
        let ledger = PenaltyLedger::new(1.0, 1.0, None);
        let outcome = droplet_pipeline(&updates, &ledger).unwrap();
        let refs: Vec<&FlatParams> = updates.values().collect();
        assert_eq!(outcome.params, fedavg(&refs).unwrap());
        assert!(!outcome.kept.is_empty());
        // Deterministic on replay.
        let again = droplet_pipeline(&updates, &ledger).unwrap();
        assert_eq!(outcome.params, again.params);
        assert_eq!(outcome.kept, again.kept);
    }

    #[test]
    fn obvious_attackers_are_excluded_and_penalized() {
        let updates = map(&[
            (0, &[0.0, 0.1]),
            (1, &[0.1, 0.0]),
            (2, &[0.05, 0.05]),
            (7, &[9.0, 9.0]),
            (8, &[9.1, 8.9]),
        ]);
        let ledger = PenaltyLedger::new(1.0, 1.0, None);
        let outcome = droplet_pipeline(&updates, &ledger).unwrap();
        assert_eq!(outcome.kept, vec![0, 1, 2]);
        assert_eq!(outcome.split.suspects, vec![7, 8]);
        assert_eq!(outcome.ledger.score(7), 1.0);
        assert_eq!(outcome.ledger.score(8), 1.0);
        let refs: Vec<&FlatParams> = outcome.kept.iter().map(|id| &updates[id]).collect();
        assert_eq!(outcome.params, fedavg(&refs).unwrap());
    }

    #[test]
    fn carried_penalties_survive_a_cluster_inversion() {
        // Rounds 1 and 2: the two attackers are an obvious minority and
        // collect penalties. Round 3: they sit in the majority cluster
        // next to one benign straggler, but their ledger scores still
        // keep them out of the aggregate.
        let mut ledger = PenaltyLedger::new(1.0, 1.0, None);

        for _ in 0..2 {
            let updates = map(&[
                (0, &[0.00]),
                (1, &[0.05]),
                (2, &[0.10]),
                (10, &[10.0]),
                (11, &[10.01]),
            ]);
            let outcome = droplet_pipeline(&updates, &ledger).unwrap();
            assert_eq!(outcome.split.suspects, vec![10, 11]);
            ledger = outcome.ledger;
        }
        assert_eq!(ledger.score(10), 2.0);
        assert_eq!(ledger.score(11), 2.0);

        let inverted = map(&[
            (0, &[0.00]),
            (1, &[0.05]),
            (3, &[10.3]),
            (10, &[10.0]),
            (11, &[10.01]),
        ]);
        let outcome = droplet_pipeline(&inverted, &ledger).unwrap();
        assert_eq!(outcome.split.benign, vec![3, 10, 11]);
        assert_eq!(outcome.kept, vec![3], "attackers keep nonzero scores and stay out");
        assert_eq!(outcome.params, inverted[&3]);
        assert_eq!(outcome.ledger.score(10), 1.0);
        assert_eq!(outcome.ledger.score(11), 1.0);
    }

    #[test]
    fn drop_pipeline_distills_on_schedule() {
        // A single update makes distillation an exact fixed point (the
        // aggregate, the lone teacher, and the clone share every bit), so
        // the schedule is observable without perturbing the aggregate.
        let data = synth_blobs(3, 8, 30, 0.05, 1).unwrap();
        let arch = Arch::mlp(8, 12, 3).unwrap();
        let global = Classifier::new(arch.clone(), 3);
        let update = global.params().clone();
        let updates: BTreeMap<usize, FlatParams> =
            std::iter::once((0, update.clone())).collect();
        let gen = Generator::new(4, 16, 8, 5).unwrap();
        let cfg = DistillConfig {
            period: 2,
            query_budget: 128,
            batch_size: 16,
            generator_steps: 1,
            clone_steps: 2,
            generator_lr: 0.1,
            clone_lr: 0.05,
            clean_seed: data,
        };
        let ledger = PenaltyLedger::new(1.0, 1.0, None);

        let (r1, _) = drop_pipeline(&updates, &ledger, &global, &gen, &cfg, 1, 9).unwrap();
        assert!(!r1.distilled);
        let (r2, _) = drop_pipeline(&updates, &ledger, &global, &gen, &cfg, 2, 9).unwrap();
        assert!(r2.distilled);
        assert_eq!(r2.kept, vec![0]);
        assert_eq!(r2.params, update, "self-distillation must not move the aggregate");
    }

    #[test]
    fn droplet_defense_reports_exclusions() {
        let updates = map(&[(0, &[0.0]), (1, &[0.02]), (2, &[0.04]), (9, &[5.0])]);
        let mut d = DropletDefense::new(PenaltyLedger::new(1.0, 1.0, None));
        let arch = Arch::mlp(1, 2, 2).unwrap();
        let global = Classifier::new(arch, 1);
        let input = RoundInput { round: 1, global: &global, updates: &updates };
        let verdict = d.process(&input).unwrap();
        assert_eq!(verdict.kept, vec![0, 1, 2]);
        assert_eq!(verdict.excluded, vec![9]);
        assert_eq!(d.ledger().score(9), 1.0);
    }
}
