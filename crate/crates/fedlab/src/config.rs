//! Declarative experiment specification, mirroring the TOML/JSON config
//! files accepted by the command line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::TrainingConfig;

fn d_schema_version() -> u32 {
    1
}
fn d_test_fraction() -> f64 {
    0.2
}
fn d_update_scale() -> f64 {
    1.0
}
fn d_patch() -> usize {
    3
}
fn d_delta() -> f64 {
    1.0
}
fn d_penalty() -> f64 {
    1.0
}
fn d_reward() -> f64 {
    1.0
}
fn d_ban_threshold() -> f64 {
    5.0
}
fn d_period() -> usize {
    5
}
fn d_budget() -> usize {
    20_000
}
fn d_clean_seed() -> usize {
    64
}
fn d_batch() -> usize {
    32
}
fn d_gen_steps() -> usize {
    1
}
fn d_clone_steps() -> usize {
    4
}
fn d_gen_lr() -> f64 {
    0.1
}
fn d_clone_lr() -> f64 {
    0.05
}
fn d_latent() -> usize {
    16
}
fn d_gen_hidden() -> usize {
    64
}
fn d_lambda() -> f64 {
    0.8
}
fn d_tau() -> f64 {
    0.85
}

/// A complete experiment description. Everything a run needs, and nothing
/// the run derives, lives here; reruns from an identical spec are
/// byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "d_schema_version")]
    pub schema_version: u32,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub partition: PartitionSpec,
    pub federation: FederationSpec,
    pub training: TrainingConfig,
    pub attack: AttackSpec,
    pub defense: DefenseSpec,
    #[serde(default)]
    pub eval: EvalSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Synthetic Gaussian blobs in the unit cube.
    Blobs {
        classes: usize,
        dim: usize,
        per_class: usize,
        spread: f64,
        #[serde(default = "d_test_fraction")]
        test_fraction: f64,
        /// Samples withheld for the server before partitioning. The
        /// distillation clean seed is drawn from here, so the client data
        /// stays identical across defenses.
        #[serde(default)]
        server_reserve: usize,
    },
    /// IDX image/label file pairs (MNIST layout).
    Idx {
        train_images: std::path::PathBuf,
        train_labels: std::path::PathBuf,
        test_images: std::path::PathBuf,
        test_labels: std::path::PathBuf,
        #[serde(default)]
        server_reserve: usize,
    },
}

impl DatasetSpec {
    pub fn server_reserve(&self) -> usize {
        match self {
            DatasetSpec::Blobs { server_reserve, .. } => *server_reserve,
            DatasetSpec::Idx { server_reserve, .. } => *server_reserve,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Mlp { hidden: usize },
    Cnn { height: usize, width: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    /// Dirichlet concentration; `inf` gives an IID split.
    #[serde(with = "alpha_repr")]
    pub alpha: f64,
}

/// JSON has no float infinity, so an infinite alpha round-trips as the
/// string "inf". TOML passes `inf` through as a native float.
mod alpha_repr {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    struct AlphaVisitor;

    impl Visitor<'_> for AlphaVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a number or the string \"inf\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" | "infinity" => Ok(f64::INFINITY),
                other => Err(E::custom(format!("expected \"inf\", got \"{other}\""))),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(AlphaVisitor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSpec {
    pub clients: usize,
    pub rounds: usize,
    /// Fraction of clients sampled per round. Half the federation when
    /// neither this nor `sampled_per_round` is given.
    #[serde(default)]
    pub sample_fraction: Option<f64>,
    /// Absolute per-round sample size; overrides nothing, conflicts with
    /// `sample_fraction` if both are set.
    #[serde(default)]
    pub sampled_per_round: Option<usize>,
}

impl FederationSpec {
    /// Per-round sample size after resolving fraction vs. absolute count.
    pub fn resolved_sample(&self) -> Result<usize> {
        match (self.sampled_per_round, self.sample_fraction) {
            (Some(_), Some(_)) => Err(Error::config(
                "federation.sampled_per_round and federation.sample_fraction are mutually exclusive",
            )),
            (Some(c), None) => Ok(c),
            (None, fraction) => {
                let f = fraction.unwrap_or(0.5);
                if !(0.0..=1.0).contains(&f) || f == 0.0 {
                    return Err(Error::config(format!(
                        "federation.sample_fraction must be in (0, 1], got {f}"
                    )));
                }
                Ok(((f * self.clients as f64 + 0.5).floor() as usize).max(1))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    /// Fraction of the federation the attacker controls.
    pub mcr: f64,
    /// Fraction of each malicious client's local set that gets poisoned.
    pub dpr: f64,
    pub victim: usize,
    pub target: usize,
    /// Multiplier on malicious parameter deltas before submission.
    #[serde(default = "d_update_scale")]
    pub update_scale: f64,
    #[serde(default)]
    pub trigger: TriggerSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TriggerSpec {
    /// Saturating pixel patch in the top-left image corner. The width of
    /// the underlying image is taken from the model spec (or the square
    /// root of the feature count) unless given explicitly.
    CornerPatch {
        #[serde(default = "d_patch")]
        patch: usize,
        #[serde(default = "d_delta")]
        delta: f64,
        #[serde(default)]
        width: Option<usize>,
    },
    /// Explicit `(feature index, delta)` pairs.
    Coords { coords: Vec<(usize, f64)> },
}

impl Default for TriggerSpec {
    fn default() -> Self {
        TriggerSpec::CornerPatch { patch: d_patch(), delta: d_delta(), width: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DefenseSpec {
    Fedavg,
    Median,
    Multikrum {
        /// Tolerated malicious count; defaults to `round(mcr * C)`.
        #[serde(default)]
        f: Option<usize>,
        /// Updates kept; defaults to `n - f`.
        #[serde(default)]
        m: Option<usize>,
    },
    Droplet {
        #[serde(default = "d_penalty")]
        p: f64,
        #[serde(default = "d_reward")]
        r: f64,
        #[serde(default = "d_ban_threshold")]
        tau_b: f64,
        #[serde(default)]
        ban_enabled: bool,
    },
    Drop {
        #[serde(default = "d_penalty")]
        p: f64,
        #[serde(default = "d_reward")]
        r: f64,
        #[serde(default = "d_ban_threshold")]
        tau_b: f64,
        #[serde(default)]
        ban_enabled: bool,
        /// Distill every k-th round.
        #[serde(default = "d_period")]
        k: usize,
        #[serde(default = "d_budget")]
        query_budget: usize,
        /// Trusted clean samples drawn from the server reserve.
        #[serde(default = "d_clean_seed")]
        clean_seed_size: usize,
        #[serde(default = "d_batch")]
        batch_size: usize,
        #[serde(default = "d_gen_steps")]
        generator_steps: usize,
        #[serde(default = "d_clone_steps")]
        clone_steps: usize,
        #[serde(default = "d_gen_lr")]
        generator_lr: f64,
        #[serde(default = "d_clone_lr")]
        clone_lr: f64,
        #[serde(default = "d_latent")]
        latent_dim: usize,
        #[serde(default = "d_gen_hidden")]
        generator_hidden: usize,
    },
}

impl DefenseSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            DefenseSpec::Fedavg => "fedavg",
            DefenseSpec::Median => "median",
            DefenseSpec::Multikrum { .. } => "multikrum",
            DefenseSpec::Droplet { .. } => "droplet",
            DefenseSpec::Drop { .. } => "drop",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    /// MTA threshold for a round to qualify in the consistency statistic.
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    /// ASR threshold a consistent attack must hold in qualifying rounds.
    #[serde(default = "d_tau")]
    pub tau: f64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec { lambda: d_lambda(), tau: d_tau() }
    }
}

impl ExperimentSpec {
    /// Structural validation that needs no data loading. Violations name
    /// the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != 1 {
            return Err(Error::config(format!(
                "schema_version {} is not supported (expected 1)",
                self.schema_version
            )));
        }
        match &self.dataset {
            DatasetSpec::Blobs { classes, dim, per_class, spread, test_fraction, server_reserve } => {
                if *classes < 2 {
                    return Err(Error::config("dataset.classes must be at least 2"));
                }
                if *dim == 0 {
                    return Err(Error::config("dataset.dim must be positive"));
                }
                if *per_class < 2 {
                    return Err(Error::config("dataset.per_class must be at least 2"));
                }
                if !spread.is_finite() || *spread < 0.0 {
                    return Err(Error::config(format!(
                        "dataset.spread must be nonnegative, got {spread}"
                    )));
                }
                if !(0.0..1.0).contains(test_fraction) || *test_fraction == 0.0 {
                    return Err(Error::config(format!(
                        "dataset.test_fraction must be in (0, 1), got {test_fraction}"
                    )));
                }
                if *server_reserve >= classes * per_class {
                    return Err(Error::config(
                        "dataset.server_reserve leaves no training data",
                    ));
                }
            }
            DatasetSpec::Idx { .. } => {}
        }
        match &self.model {
            ModelSpec::Mlp { hidden } => {
                if *hidden == 0 {
                    return Err(Error::config("model.hidden must be positive"));
                }
            }
            ModelSpec::Cnn { height, width } => {
                if height % 4 != 0 || width % 4 != 0 {
                    return Err(Error::config(
                        "model.height and model.width must be divisible by 4",
                    ));
                }
            }
        }
        if self.partition.alpha.is_nan() || self.partition.alpha <= 0.0 {
            return Err(Error::config(format!(
                "partition.alpha must be positive or inf, got {}",
                self.partition.alpha
            )));
        }
        if self.federation.clients == 0 {
            return Err(Error::config("federation.clients must be positive"));
        }
        if self.federation.rounds == 0 {
            return Err(Error::config("federation.rounds must be positive"));
        }
        let sample = self.federation.resolved_sample()?;
        if sample > self.federation.clients {
            return Err(Error::config(format!(
                "federation.sampled_per_round {sample} exceeds federation.clients {}",
                self.federation.clients
            )));
        }
        self.training.validate()?;
        if !(0.0..1.0).contains(&self.attack.mcr) {
            return Err(Error::config(format!(
                "attack.mcr must be in [0, 1), got {}",
                self.attack.mcr
            )));
        }
        if !(0.0..=1.0).contains(&self.attack.dpr) {
            return Err(Error::config(format!(
                "attack.dpr must be in [0, 1], got {}",
                self.attack.dpr
            )));
        }
        if self.attack.victim == self.attack.target {
            return Err(Error::config(
                "attack.victim and attack.target must differ",
            ));
        }
        if !self.attack.update_scale.is_finite() || self.attack.update_scale <= 0.0 {
            return Err(Error::config(format!(
                "attack.update_scale must be positive, got {}",
                self.attack.update_scale
            )));
        }
        match &self.attack.trigger {
            TriggerSpec::CornerPatch { patch, delta, .. } => {
                if *patch == 0 {
                    return Err(Error::config("attack.trigger.patch must be positive"));
                }
                if !delta.is_finite() {
                    return Err(Error::config("attack.trigger.delta must be finite"));
                }
            }
            TriggerSpec::Coords { coords } => {
                if coords.is_empty() {
                    return Err(Error::config("attack.trigger.coords must be non-empty"));
                }
            }
        }
        match &self.defense {
            DefenseSpec::Fedavg | DefenseSpec::Median | DefenseSpec::Multikrum { .. } => {}
            DefenseSpec::Droplet { p, r, tau_b, .. } => {
                validate_monitor(*p, *r, *tau_b)?;
            }
            DefenseSpec::Drop {
                p,
                r,
                tau_b,
                k,
                clean_seed_size,
                batch_size,
                generator_lr,
                clone_lr,
                latent_dim,
                generator_hidden,
                ..
            } => {
                validate_monitor(*p, *r, *tau_b)?;
                if *k == 0 {
                    return Err(Error::config("defense.k must be positive"));
                }
                if *batch_size == 0 {
                    return Err(Error::config("defense.batch_size must be positive"));
                }
                if *latent_dim == 0 || *generator_hidden == 0 {
                    return Err(Error::config(
                        "defense.latent_dim and defense.generator_hidden must be positive",
                    ));
                }
                for (name, lr) in
                    [("defense.generator_lr", generator_lr), ("defense.clone_lr", clone_lr)]
                {
                    if !lr.is_finite() || *lr <= 0.0 {
                        return Err(Error::config(format!("{name} must be positive, got {lr}")));
                    }
                }
                if *clean_seed_size == 0 {
                    return Err(Error::config("defense.clean_seed_size must be positive"));
                }
                if *clean_seed_size > self.dataset.server_reserve() {
                    return Err(Error::config(format!(
                        "defense.clean_seed_size {clean_seed_size} exceeds dataset.server_reserve {}",
                        self.dataset.server_reserve()
                    )));
                }
            }
        }
        for (name, v) in [("eval.lambda", self.eval.lambda), ("eval.tau", self.eval.tau)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

fn validate_monitor(p: f64, r: f64, tau_b: f64) -> Result<()> {
    if !p.is_finite() || p <= 0.0 {
        return Err(Error::config(format!("defense.p must be positive, got {p}")));
    }
    if !r.is_finite() || r <= 0.0 {
        return Err(Error::config(format!("defense.r must be positive, got {r}")));
    }
    if !tau_b.is_finite() || tau_b <= 0.0 {
        return Err(Error::config(format!("defense.tau_b must be positive, got {tau_b}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob_spec() -> ExperimentSpec {
        ExperimentSpec {
            schema_version: 1,
            seed: 42,
            dataset: DatasetSpec::Blobs {
                classes: 3,
                dim: 16,
                per_class: 40,
                spread: 0.05,
                test_fraction: 0.2,
                server_reserve: 0,
            },
            model: ModelSpec::Mlp { hidden: 16 },
            partition: PartitionSpec { alpha: f64::INFINITY },
            federation: FederationSpec {
                clients: 10,
                rounds: 3,
                sample_fraction: None,
                sampled_per_round: Some(5),
            },
            training: TrainingConfig { lr: 0.2, batch_size: 8, epochs: 1 },
            attack: AttackSpec {
                mcr: 0.2,
                dpr: 0.1,
                victim: 0,
                target: 1,
                update_scale: 1.0,
                trigger: TriggerSpec::Coords { coords: vec![(0, 1.0), (1, 1.0)] },
            },
            defense: DefenseSpec::Fedavg,
            eval: EvalSpec::default(),
        }
    }

    #[test]
    fn toml_round_trip_with_defaults() {
        let text = r#"
            seed = 7
            [dataset]
            kind = "blobs"
            classes = 4
            dim = 64
            per_class = 50
            spread = 0.05
            server_reserve = 40
            [model]
            kind = "cnn"
            height = 8
            width = 8
            [partition]
            alpha = inf
            [federation]
            clients = 30
            rounds = 40
            [training]
            lr = 0.3
            batch_size = 16
            epochs = 2
            [attack]
            mcr = 0.2
            dpr = 0.05
            victim = 0
            target = 1
            [defense]
            kind = "drop"
            k = 5
            query_budget = 4096
            clean_seed_size = 40
        "#;
        let spec: ExperimentSpec = toml::from_str(text).unwrap();
        spec.validate().unwrap();
        assert_eq!(spec.schema_version, 1);
        assert!(spec.partition.alpha.is_infinite());
        assert_eq!(spec.federation.resolved_sample().unwrap(), 15);
        assert_eq!(spec.eval.lambda, 0.8);
        match &spec.defense {
            DefenseSpec::Drop { k, query_budget, clean_seed_size, batch_size, .. } => {
                assert_eq!(*k, 5);
                assert_eq!(*query_budget, 4096);
                assert_eq!(*clean_seed_size, 40);
                assert_eq!(*batch_size, 32);
            }
            other => panic!("wrong defense {other:?}"),
        }
        match &spec.attack.trigger {
            TriggerSpec::CornerPatch { patch, delta, width } => {
                assert_eq!(*patch, 3);
                assert_eq!(*delta, 1.0);
                assert!(width.is_none());
            }
            other => panic!("wrong trigger {other:?}"),
        }

        let json = serde_json::to_string(&spec).unwrap();
        let back: ExperimentSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn validation_names_offending_fields() {
        let mut spec = blob_spec();
        spec.attack.mcr = 1.2;
        let msg = spec.validate().unwrap_err().to_string();
        assert!(msg.contains("attack.mcr"), "{msg}");

        let mut spec = blob_spec();
        spec.attack.victim = 1;
        assert!(spec.validate().is_err());

        let mut spec = blob_spec();
        spec.training.lr = -0.5;
        let msg = spec.validate().unwrap_err().to_string();
        assert!(msg.contains("training.lr"), "{msg}");

        let mut spec = blob_spec();
        spec.eval.lambda = 1.5;
        let msg = spec.validate().unwrap_err().to_string();
        assert!(msg.contains("eval.lambda"), "{msg}");
    }

    #[test]
    fn unknown_top_level_keys_are_rejected() {
        let text = r#"
            seed = 7
            banana = true
        "#;
        let err = toml::from_str::<ExperimentSpec>(text).unwrap_err();
        assert!(err.to_string().contains("banana"), "{err}");
    }

    #[test]
    fn sample_resolution_rules() {
        let mut spec = blob_spec();
        spec.federation.sampled_per_round = None;
        spec.federation.sample_fraction = None;
        assert_eq!(spec.federation.resolved_sample().unwrap(), 5);

        spec.federation.sample_fraction = Some(0.3);
        assert_eq!(spec.federation.resolved_sample().unwrap(), 3);

        spec.federation.sampled_per_round = Some(4);
        assert!(spec.federation.resolved_sample().is_err());

        spec.federation.sample_fraction = None;
        assert_eq!(spec.federation.resolved_sample().unwrap(), 4);
    }

    #[test]
    fn drop_clean_seed_must_fit_reserve() {
        let mut spec = blob_spec();
        spec.defense = DefenseSpec::Drop {
            p: 1.0,
            r: 1.0,
            tau_b: 5.0,
            ban_enabled: false,
            k: 5,
            query_budget: 100,
            clean_seed_size: 10,
            batch_size: 8,
            generator_steps: 1,
            clone_steps: 2,
            generator_lr: 0.1,
            clone_lr: 0.05,
            latent_dim: 8,
            generator_hidden: 16,
        };
        let msg = spec.validate().unwrap_err().to_string();
        assert!(msg.contains("server_reserve"), "{msg}");
    }
}
