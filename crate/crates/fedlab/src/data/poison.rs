//! Targeted backdoor poisoning: add a fixed trigger pattern to a fraction
//! of victim-class samples and relabel them to the attacker's target.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::seeding::{self, STREAM_POISON};
use crate::Real;

/// A backdoor attack description. The trigger is a sparse additive
/// pattern: `coords` holds `(feature index, delta)` pairs. `dpr` is the
/// fraction of a client's local set to poison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoisonSpec {
    #[serde(rename = "coords")]
    pub trigger: Vec<(usize, f64)>,
    #[serde(rename = "victim")]
    pub victim_class: usize,
    #[serde(rename = "target")]
    pub target_class: usize,
    pub dpr: f64,
}

impl PoisonSpec {
    /// A square patch of saturated pixels in the top-left corner of a
    /// `width`-pixel-wide image, the classic pixel-pattern trigger.
    pub fn corner_patch(
        image_width: usize,
        patch: usize,
        delta: f64,
        victim_class: usize,
        target_class: usize,
        dpr: f64,
    ) -> PoisonSpec {
        let mut trigger = Vec::with_capacity(patch * patch);
        for r in 0..patch {
            for c in 0..patch {
                trigger.push((r * image_width + c, delta));
            }
        }
        PoisonSpec { trigger, victim_class, target_class, dpr }
    }

    pub fn validate(&self, input_dim: usize, num_classes: usize) -> Result<()> {
        if self.victim_class == self.target_class {
            return Err(Error::invalid(
                "victim and target class must differ".to_string(),
            ));
        }
        if self.victim_class >= num_classes || self.target_class >= num_classes {
            return Err(Error::invalid(format!(
                "victim {} / target {} out of range for {num_classes} classes",
                self.victim_class, self.target_class
            )));
        }
        if !(0.0..=1.0).contains(&self.dpr) {
            return Err(Error::invalid(format!(
                "dpr must be in [0, 1], got {}",
                self.dpr
            )));
        }
        if self.trigger.is_empty() {
            return Err(Error::invalid("trigger has no coordinates"));
        }
        for (i, delta) in &self.trigger {
            if *i >= input_dim {
                return Err(Error::invalid(format!(
                    "trigger coordinate {i} out of range for {input_dim} features"
                )));
            }
            if !delta.is_finite() {
                return Err(Error::invalid(format!(
                    "trigger delta at {i} is not finite"
                )));
            }
        }
        Ok(())
    }

    /// Adds the trigger to one feature row, clipping to `[0, 1]`.
    pub fn apply_trigger(&self, row: &mut [Real]) {
        for (i, delta) in &self.trigger {
            row[*i] = ((row[*i] as f64 + delta).clamp(0.0, 1.0)) as Real;
        }
    }

    /// Number of samples to poison in a local set of size `n`:
    /// `dpr * n` rounded half-up.
    pub fn poison_count(&self, n: usize) -> usize {
        (self.dpr * n as f64 + 0.5).floor() as usize
    }
}

/// Returns a copy of `data` with `poison_count(len)` victim-class samples
/// triggered and relabeled to the target class. The samples are chosen by
/// seeded draw. Errors if the client holds too few victim samples.
pub fn poison(data: &LabeledDataset, spec: &PoisonSpec, seed: u64) -> Result<LabeledDataset> {
    spec.validate(data.dim(), data.num_classes)?;
    let count = spec.poison_count(data.len());
    if count == 0 {
        return Ok(data.clone());
    }
    let mut victims = data.class_indices(spec.victim_class);
    if victims.len() < count {
        return Err(Error::InsufficientVictims { needed: count, available: victims.len() });
    }
    let mut rng = seeding::rng(seeding::mix2(seed, STREAM_POISON));
    victims.shuffle(&mut rng);
    let mut chosen: Vec<usize> = victims[..count].to_vec();
    chosen.sort_unstable();

    let mut out = data.clone();
    for i in chosen {
        let mut row = out.inputs.row_mut(i);
        spec.apply_trigger(row.as_slice_mut().expect("contiguous row"));
        out.labels[i] = spec.target_class;
    }
    Ok(out)
}

/// Builds the attack-success evaluation set: every victim-class test
/// sample with the trigger applied, labels left at the victim class.
pub fn triggered_testset(test: &LabeledDataset, spec: &PoisonSpec) -> Result<LabeledDataset> {
    spec.validate(test.dim(), test.num_classes)?;
    let victims = test.class_indices(spec.victim_class);
    if victims.is_empty() {
        return Err(Error::invalid(format!(
            "test set has no samples of victim class {}",
            spec.victim_class
        )));
    }
    let mut out = test.subset(&victims);
    for mut row in out.inputs.rows_mut() {
        spec.apply_trigger(row.as_slice_mut().expect("contiguous row"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::synth_blobs;

    fn spec(dpr: f64) -> PoisonSpec {
        PoisonSpec {
            trigger: vec![(0, 1.0), (1, 1.0)],
            victim_class: 0,
            target_class: 1,
            dpr,
        }
    }

    #[test]
    fn zero_dpr_returns_identical_data() {
        let d = synth_blobs(3, 8, 30, 0.05, 1).unwrap();
        let p = poison(&d, &spec(0.0), 9).unwrap();
        assert_eq!(p, d);
    }

    #[test]
    fn poison_counts_round_half_up() {
        assert_eq!(spec(0.025).poison_count(1000), 25);
        assert_eq!(spec(0.0125).poison_count(1000), 13);
        assert_eq!(spec(0.05).poison_count(30), 2);
        assert_eq!(spec(0.0).poison_count(1000), 0);
    }

    #[test]
    fn exactly_the_requested_rows_change() {
        let d = synth_blobs(4, 8, 250, 0.05, 3).unwrap();
        let sp = spec(0.025);
        let p = poison(&d, &sp, 4).unwrap();
        assert_eq!(d.len(), 1000);

        let mut changed = Vec::new();
        for i in 0..d.len() {
            let row_changed = d.inputs.row(i) != p.inputs.row(i);
            let label_changed = d.labels[i] != p.labels[i];
            assert_eq!(row_changed, label_changed, "row {i}");
            if row_changed {
                changed.push(i);
            }
        }
        assert_eq!(changed.len(), 25);
        for i in changed {
            assert_eq!(d.labels[i], 0, "only victim rows may change");
            assert_eq!(p.labels[i], 1);
            for j in 2..d.dim() {
                assert_eq!(d.inputs[[i, j]], p.inputs[[i, j]], "row {i} coord {j}");
            }
            assert_eq!(p.inputs[[i, 0]], 1.0);
            assert_eq!(p.inputs[[i, 1]], 1.0);
        }
    }

    #[test]
    fn poisoning_is_seeded() {
        let d = synth_blobs(3, 8, 100, 0.05, 5).unwrap();
        let sp = spec(0.1);
        assert_eq!(poison(&d, &sp, 1).unwrap(), poison(&d, &sp, 1).unwrap());
        assert_ne!(poison(&d, &sp, 1).unwrap(), poison(&d, &sp, 2).unwrap());
    }

    #[test]
    fn insufficient_victims_reports_shortfall() {
        let d = synth_blobs(2, 4, 10, 0.05, 1).unwrap();
        let sp = PoisonSpec { trigger: vec![(0, 1.0)], victim_class: 0, target_class: 1, dpr: 0.9 };
        match poison(&d, &sp, 1) {
            Err(Error::InsufficientVictims { needed, available }) => {
                assert_eq!(needed, 18);
                assert_eq!(available, 10);
            }
            other => panic!("expected InsufficientVictims, got {other:?}"),
        }
    }

    #[test]
    fn triggered_testset_keeps_victim_labels_and_clips() {
        let d = synth_blobs(3, 8, 40, 0.05, 7).unwrap();
        let sp = spec(0.5);
        let t = triggered_testset(&d, &sp).unwrap();
        assert_eq!(t.len(), 40);
        assert!(t.labels.iter().all(|l| *l == 0));
        for row in t.inputs.rows() {
            assert_eq!(row[0], 1.0);
            assert_eq!(row[1], 1.0);
        }
    }

    #[test]
    fn zero_delta_trigger_changes_nothing_but_labels_stay() {
        let d = synth_blobs(3, 8, 10, 0.05, 7).unwrap();
        let sp = PoisonSpec { trigger: vec![(3, 0.0)], victim_class: 0, target_class: 2, dpr: 0.0 };
        let t = triggered_testset(&d, &sp).unwrap();
        let victims = d.class_indices(0);
        assert_eq!(t.inputs, d.subset(&victims).inputs);
    }

    #[test]
    fn validation_catches_bad_specs() {
        let d = synth_blobs(3, 8, 10, 0.05, 7).unwrap();
        let same = PoisonSpec { trigger: vec![(0, 1.0)], victim_class: 1, target_class: 1, dpr: 0.1 };
        assert!(poison(&d, &same, 1).is_err());
        let oob = PoisonSpec { trigger: vec![(99, 1.0)], victim_class: 0, target_class: 1, dpr: 0.1 };
        assert!(poison(&d, &oob, 1).is_err());
        let bad_dpr = PoisonSpec { trigger: vec![(0, 1.0)], victim_class: 0, target_class: 1, dpr: 1.5 };
        assert!(poison(&d, &bad_dpr, 1).is_err());
    }

    #[test]
    fn corner_patch_builds_row_major_coords() {
        let sp = PoisonSpec::corner_patch(8, 3, 1.0, 0, 1, 0.05);
        let coords: Vec<usize> = sp.trigger.iter().map(|(i, _)| *i).collect();
        assert_eq!(coords, vec![0, 1, 2, 8, 9, 10, 16, 17, 18]);
    }
}
