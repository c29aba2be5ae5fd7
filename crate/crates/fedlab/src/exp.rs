//! Experiment assembly: turns a declarative spec into a runnable
//! federation with its defense, and drives it to completion.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::Serialize;

use crate::analysis::consistency_stat;
use crate::config::{
    AttackSpec, DatasetSpec, DefenseSpec, ExperimentSpec, ModelSpec, TriggerSpec,
};
use crate::data::{
    load_idx, partition, poison, split_train_test, synth_blobs, triggered_testset,
    LabeledDataset, PoisonSpec,
};
use crate::defense::{
    DistillConfig, DropDefense, DropletDefense, FedAvgDefense, KrumParams, MedianDefense,
    MultiKrumDefense, PenaltyLedger,
};
use crate::error::{Error, Result};
use crate::fed::{
    ClientState, Defense, Federation, FederationConfig, RecordSink, RoundRecord,
};
use crate::nn::{Arch, Classifier, Generator};
use crate::seeding::{
    self, STREAM_GENERATOR, STREAM_INIT, STREAM_MALICIOUS, STREAM_POISON, STREAM_RESERVE,
};

/// A ready-to-run federation paired with its defense.
pub struct BuiltExperiment {
    pub federation: Federation,
    pub defense: Box<dyn Defense>,
}

/// Headline numbers of a finished run.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub defense: String,
    pub rounds: usize,
    pub final_mta: f64,
    pub final_asr: f64,
    pub lambda: f64,
    pub tau: f64,
    /// Rounds whose MTA reached `lambda`.
    pub qualifying_rounds: usize,
    /// Minimum ASR over qualifying rounds; absent when none qualified.
    pub min_asr_over_qualifying: Option<f64>,
    /// Whether that minimum cleared `tau`; absent when none qualified.
    pub attack_consistent: Option<bool>,
    pub total_wall_ms: u64,
}

/// Everything a run produces in memory.
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub summary: RunSummary,
}

/// Turns the trigger spec into concrete poison coordinates. Corner patches
/// need an image width: explicit, from the CNN spec, or the square root of
/// the feature count.
pub fn resolve_trigger(
    attack: &AttackSpec,
    model: &ModelSpec,
    input_dim: usize,
) -> Result<PoisonSpec> {
    match &attack.trigger {
        TriggerSpec::Coords { coords } => Ok(PoisonSpec {
            trigger: coords.clone(),
            victim_class: attack.victim,
            target_class: attack.target,
            dpr: attack.dpr,
        }),
        TriggerSpec::CornerPatch { patch, delta, width } => {
            let w = match (width, model) {
                (Some(w), _) => *w,
                (None, ModelSpec::Cnn { width, .. }) => *width,
                (None, ModelSpec::Mlp { .. }) => {
                    let side = (input_dim as f64).sqrt().round() as usize;
                    if side * side != input_dim {
                        return Err(Error::config(format!(
                            "attack.trigger.width is required: {input_dim} features do not form a square image"
                        )));
                    }
                    side
                }
            };
            if *patch > w {
                return Err(Error::config(format!(
                    "attack.trigger.patch {patch} exceeds the image width {w}"
                )));
            }
            Ok(PoisonSpec::corner_patch(
                w,
                *patch,
                *delta,
                attack.victim,
                attack.target,
                attack.dpr,
            ))
        }
    }
}

/// Fills Multi-Krum defaults: `f` from the declared attacker fraction,
/// `m` keeping everything not written off.
pub fn resolve_krum(
    f: Option<usize>,
    m: Option<usize>,
    mcr: f64,
    sample: usize,
) -> Result<KrumParams> {
    let f = f.unwrap_or(((mcr * sample as f64) + 0.5).floor() as usize);
    if sample < f + 3 {
        return Err(Error::config(format!(
            "defense.f = {f} needs at least {} sampled clients per round, got {sample}",
            f + 3
        )));
    }
    let m = m.unwrap_or(sample - f);
    if m == 0 || m > sample {
        return Err(Error::config(format!(
            "defense.m must be in 1..={sample}, got {m}"
        )));
    }
    Ok(KrumParams { f, m })
}

fn align_num_classes(
    train: LabeledDataset,
    test: LabeledDataset,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let k = train.num_classes.max(test.num_classes);
    Ok((
        LabeledDataset::new(train.inputs, train.labels, k)?,
        LabeledDataset::new(test.inputs, test.labels, k)?,
    ))
}

/// Splits off a seeded random server reserve from the training pool.
fn carve_reserve(
    pool: &LabeledDataset,
    reserve: usize,
    seed: u64,
) -> (LabeledDataset, LabeledDataset) {
    if reserve == 0 {
        return (pool.subset(&[]), pool.clone());
    }
    let mut rng = seeding::rng(seeding::mix2(seed, STREAM_RESERVE));
    let mut picked: Vec<usize> =
        rand::seq::index::sample(&mut rng, pool.len(), reserve).into_iter().collect();
    picked.sort_unstable();
    let set: BTreeSet<usize> = picked.iter().copied().collect();
    let rest: Vec<usize> = (0..pool.len()).filter(|i| !set.contains(i)).collect();
    (pool.subset(&picked), pool.subset(&rest))
}

/// Builds the federation, clients, models, and defense described by the
/// spec. Fails with a field-naming message on anything inconsistent.
pub fn build_experiment(spec: &ExperimentSpec) -> Result<BuiltExperiment> {
    spec.validate()?;

    let (train_all, test, reserve_size) = match &spec.dataset {
        DatasetSpec::Blobs { classes, dim, per_class, spread, test_fraction, server_reserve } => {
            let full = synth_blobs(*classes, *dim, *per_class, *spread, spec.seed)?;
            let (train, test) = split_train_test(&full, *test_fraction, spec.seed)?;
            (train, test, *server_reserve)
        }
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            server_reserve,
        } => {
            let train = load_idx(train_images, train_labels)?;
            let test = load_idx(test_images, test_labels)?;
            (train, test, *server_reserve)
        }
    };
    let (train_all, test) = align_num_classes(train_all, test)?;
    let input_dim = train_all.dim();
    let num_classes = train_all.num_classes;
    if test.dim() != input_dim {
        return Err(Error::config(format!(
            "train ({input_dim}) and test ({}) feature dimensions differ",
            test.dim()
        )));
    }

    let arch = match &spec.model {
        ModelSpec::Mlp { hidden } => Arch::mlp(input_dim, *hidden, num_classes)?,
        ModelSpec::Cnn { height, width } => {
            if height * width != input_dim {
                return Err(Error::config(format!(
                    "model {height}x{width} does not match the {input_dim}-dimensional data"
                )));
            }
            Arch::tiny_cnn(*height, *width, num_classes)?
        }
    };

    if spec.attack.victim >= num_classes || spec.attack.target >= num_classes {
        return Err(Error::config(format!(
            "attack.victim and attack.target must be below the class count {num_classes}"
        )));
    }
    let pspec = resolve_trigger(&spec.attack, &spec.model, input_dim)?;
    pspec.validate(input_dim, num_classes)?;

    if reserve_size >= train_all.len() {
        return Err(Error::config(format!(
            "dataset.server_reserve {reserve_size} consumes the whole training pool of {}",
            train_all.len()
        )));
    }
    let (reserve, train) = carve_reserve(&train_all, reserve_size, spec.seed);

    let n = spec.federation.clients;
    let plan = partition(&train, n, spec.partition.alpha, spec.seed)?;

    let fed_cfg = FederationConfig {
        total_clients: n,
        sampled_per_round: spec.federation.resolved_sample()?,
        mcr: spec.attack.mcr,
        rounds: spec.federation.rounds,
        training: spec.training.clone(),
        seed: spec.seed,
    };

    let mut rng = seeding::rng(seeding::mix2(spec.seed, STREAM_MALICIOUS));
    let malicious: BTreeSet<usize> =
        rand::seq::index::sample(&mut rng, n, fed_cfg.malicious_count())
            .into_iter()
            .collect();

    let mut clients = Vec::with_capacity(n);
    for id in 0..n {
        let idxs = &plan.assignments[id];
        if idxs.is_empty() {
            return Err(Error::config(format!(
                "client {id} received no data; use more samples or a larger partition.alpha"
            )));
        }
        let local = train.subset(idxs);
        let state = if malicious.contains(&id) {
            let poisoned =
                poison(&local, &pspec, seeding::mix3(spec.seed, STREAM_POISON, id as u64))?;
            ClientState::malicious(id, poisoned, pspec.clone())?
        } else {
            ClientState::benign(id, local)?
        };
        clients.push(state);
    }

    let global = Classifier::new(arch, seeding::mix2(spec.seed, STREAM_INIT));
    let triggered = triggered_testset(&test, &pspec)?;

    let defense: Box<dyn Defense> = match &spec.defense {
        DefenseSpec::Fedavg => Box::new(FedAvgDefense),
        DefenseSpec::Median => Box::new(MedianDefense),
        DefenseSpec::Multikrum { f, m } => Box::new(MultiKrumDefense {
            params: resolve_krum(*f, *m, spec.attack.mcr, fed_cfg.sampled_per_round)?,
        }),
        DefenseSpec::Droplet { p, r, tau_b, ban_enabled } => Box::new(DropletDefense::new(
            PenaltyLedger::new(*p, *r, ban_enabled.then_some(*tau_b)),
        )),
        DefenseSpec::Drop {
            p,
            r,
            tau_b,
            ban_enabled,
            k,
            query_budget,
            clean_seed_size,
            batch_size,
            generator_steps,
            clone_steps,
            generator_lr,
            clone_lr,
            latent_dim,
            generator_hidden,
        } => {
            let take: Vec<usize> = (0..*clean_seed_size).collect();
            let cfg = DistillConfig {
                period: *k,
                query_budget: *query_budget,
                batch_size: *batch_size,
                generator_steps: *generator_steps,
                clone_steps: *clone_steps,
                generator_lr: *generator_lr,
                clone_lr: *clone_lr,
                clean_seed: reserve.subset(&take),
            };
            cfg.validate()?;
            let generator = Generator::new(
                *latent_dim,
                *generator_hidden,
                input_dim,
                seeding::mix2(spec.seed, STREAM_GENERATOR),
            )?;
            Box::new(DropDefense::new(
                PenaltyLedger::new(*p, *r, ban_enabled.then_some(*tau_b)),
                generator,
                cfg,
                spec.seed,
            ))
        }
    };

    let federation = Federation::new(
        fed_cfg,
        clients,
        global,
        test,
        triggered,
        spec.attack.target,
        spec.attack.update_scale,
    )?;
    Ok(BuiltExperiment { federation, defense })
}

/// Builds and runs the experiment, streaming round records into the sink.
pub fn run_spec(spec: &ExperimentSpec, sink: &mut dyn RecordSink) -> Result<RunOutput> {
    let mut built = build_experiment(spec)?;
    let started = Instant::now();
    let records = built.federation.run_experiment(built.defense.as_mut(), sink)?;
    let total_wall_ms = started.elapsed().as_millis() as u64;
    let summary = summarize(spec, &records, total_wall_ms);
    Ok(RunOutput { records, summary })
}

fn summarize(spec: &ExperimentSpec, records: &[RoundRecord], total_wall_ms: u64) -> RunSummary {
    let last = records.last().expect("a run has at least one round");
    let stat = consistency_stat(records, spec.eval.lambda);
    RunSummary {
        defense: spec.defense.kind_name().to_string(),
        rounds: records.len(),
        final_mta: last.mta,
        final_asr: last.asr,
        lambda: spec.eval.lambda,
        tau: spec.eval.tau,
        qualifying_rounds: stat.qualifying_rounds,
        min_asr_over_qualifying: stat.min_asr,
        attack_consistent: stat.attack_consistent(spec.eval.tau),
        total_wall_ms,
    }
}
