//! Grid scan for stealthy-attack-friendly learning configurations: runs
//! an undefended federation per cell and flags cells where the attack
//! succeeds while accuracy stays high.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DefenseSpec, ExperimentSpec};
use crate::error::{Error, Result};
use crate::exp::run_spec;
use crate::fed::NullSink;
use crate::nn::TrainingConfig;

/// One scanned cell. `mta`/`asr` are from the final round; a cell that
/// failed carries the error text instead and is never in the zone.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridEntry {
    pub training: TrainingConfig,
    pub mta: Option<f64>,
    pub asr: Option<f64>,
    pub error: Option<String>,
    pub in_zone: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DangerZoneReport {
    /// MTA at or above this qualifies a cell.
    pub lambda: f64,
    /// ASR at or above this (with qualifying MTA) puts a cell in the zone.
    pub tau: f64,
    pub entries: Vec<GridEntry>,
}

impl DangerZoneReport {
    /// Cells where the attack is both stealthy and effective.
    pub fn zones(&self) -> Vec<&GridEntry> {
        self.entries.iter().filter(|e| e.in_zone).collect()
    }
}

/// Runs one undefended experiment per training configuration in the grid,
/// everything else taken from `base`. Cells run in parallel; results keep
/// grid order. Per-cell failures are recorded and the scan continues.
pub fn danger_zone_scan(
    grid: &[TrainingConfig],
    base: &ExperimentSpec,
    lambda: f64,
    tau: f64,
) -> Result<DangerZoneReport> {
    if grid.is_empty() {
        return Err(Error::invalid("danger-zone scan over an empty grid"));
    }
    for (name, v) in [("lambda", lambda), ("tau", tau)] {
        if !v.is_finite() {
            return Err(Error::invalid(format!("{name} must be finite, got {v}")));
        }
    }
    let entries: Vec<GridEntry> = grid
        .par_iter()
        .map(|cell| {
            let mut spec = base.clone();
            spec.training = cell.clone();
            spec.defense = DefenseSpec::Fedavg;
            match run_spec(&spec, &mut NullSink) {
                Ok(out) => {
                    let mta = out.summary.final_mta;
                    let asr = out.summary.final_asr;
                    GridEntry {
                        training: cell.clone(),
                        mta: Some(mta),
                        asr: Some(asr),
                        error: None,
                        in_zone: mta >= lambda && asr >= tau,
                    }
                }
                Err(e) => {
                    log::warn!("grid cell {cell:?} failed: {e}");
                    GridEntry {
                        training: cell.clone(),
                        mta: None,
                        asr: None,
                        error: Some(e.to_string()),
                        in_zone: false,
                    }
                }
            }
        })
        .collect();
    Ok(DangerZoneReport { lambda, tau, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{
        AttackSpec, DatasetSpec, EvalSpec, FederationSpec, ModelSpec, PartitionSpec, TriggerSpec,
    };

    fn base_spec() -> ExperimentSpec {
        ExperimentSpec {
            schema_version: 1,
            seed: 23,
            dataset: DatasetSpec::Blobs {
                classes: 3,
                dim: 8,
                per_class: 40,
                spread: 0.04,
                test_fraction: 0.2,
                server_reserve: 0,
            },
            model: ModelSpec::Mlp { hidden: 10 },
            partition: PartitionSpec { alpha: f64::INFINITY },
            federation: FederationSpec {
                clients: 5,
                rounds: 2,
                sample_fraction: None,
                sampled_per_round: Some(3),
            },
            training: TrainingConfig { lr: 0.3, batch_size: 8, epochs: 1 },
            attack: AttackSpec {
                mcr: 0.2,
                dpr: 0.2,
                victim: 0,
                target: 1,
                update_scale: 1.0,
                trigger: TriggerSpec::Coords { coords: vec![(0, 1.0)] },
            },
            defense: DefenseSpec::Median,
            eval: EvalSpec::default(),
        }
    }

    #[test]
    fn single_cell_matches_a_standalone_run() {
        let base = base_spec();
        let cell = TrainingConfig { lr: 0.25, batch_size: 8, epochs: 1 };
        let report = danger_zone_scan(std::slice::from_ref(&cell), &base, 0.5, 0.1).unwrap();
        assert_eq!(report.entries.len(), 1);

        let mut standalone = base.clone();
        standalone.training = cell;
        standalone.defense = DefenseSpec::Fedavg;
        let out = run_spec(&standalone, &mut NullSink).unwrap();
        let entry = &report.entries[0];
        assert_eq!(entry.mta, Some(out.summary.final_mta));
        assert_eq!(entry.asr, Some(out.summary.final_asr));
        assert_eq!(entry.in_zone, entry.mta.unwrap() >= 0.5 && entry.asr.unwrap() >= 0.1);
    }

    #[test]
    fn unattainable_lambda_empties_the_zone() {
        let base = base_spec();
        let grid = vec![
            TrainingConfig { lr: 0.1, batch_size: 8, epochs: 1 },
            TrainingConfig { lr: 0.4, batch_size: 16, epochs: 1 },
        ];
        let report = danger_zone_scan(&grid, &base, 1.01, 0.0).unwrap();
        assert_eq!(report.entries.len(), 2);
        assert!(report.entries.iter().all(|e| e.error.is_none()));
        assert!(report.zones().is_empty());
    }

    #[test]
    fn failing_cells_are_recorded_and_skipped() {
        let base = base_spec();
        let grid = vec![
            TrainingConfig { lr: -1.0, batch_size: 8, epochs: 1 },
            TrainingConfig { lr: 0.3, batch_size: 8, epochs: 1 },
        ];
        let report = danger_zone_scan(&grid, &base, 0.5, 0.1).unwrap();
        let bad = &report.entries[0];
        assert!(bad.error.as_deref().unwrap().contains("training.lr"));
        assert!(!bad.in_zone);
        assert!(bad.mta.is_none());
        let good = &report.entries[1];
        assert!(good.error.is_none());
        assert!(good.mta.is_some());
    }

    #[test]
    fn empty_grid_is_rejected() {
        assert!(danger_zone_scan(&[], &base_spec(), 0.5, 0.1).is_err());
    }
}
