//! Randomized invariant checks over the public API.

use std::collections::BTreeMap;

use proptest::prelude::*;

use fedlab::data::{partition, poison, synth_blobs, PoisonSpec};
use fedlab::defense::{
    cluster_updates, median_agg, multi_krum, update_ledger, ClusterSplit, KrumParams,
    PenaltyLedger,
};
use fedlab::fed::fedavg;
use fedlab::nn::{Arch, FlatParams};
use fedlab::Real;

fn params_strategy(len: usize) -> impl Strategy<Value = FlatParams> {
    prop::collection::vec(-10.0f64..10.0, len)
        .prop_map(|v| FlatParams::from_vec(v.into_iter().map(|x| x as Real).collect()))
}

fn update_map(n: usize, dim: usize) -> impl Strategy<Value = BTreeMap<usize, FlatParams>> {
    prop::collection::vec(params_strategy(dim), n)
        .prop_map(|v| v.into_iter().enumerate().collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flatten_round_trips_through_any_layout(values in prop::collection::vec(-5.0f64..5.0, 1..200), hidden in 1usize..8) {
        // Interpret the vector through an MLP layout large enough to hold it.
        let inputs = 3usize;
        let classes = 2usize;
        let arch = Arch::mlp(inputs, hidden, classes).unwrap();
        let len = arch.param_len();
        let mut padded: Vec<Real> = values.iter().map(|v| *v as Real).collect();
        padded.resize(len, 0.0);
        let flat = FlatParams::from_vec(padded);
        let tensors = flat.unflatten(&arch.layout()).unwrap();
        let back = FlatParams::flatten(&tensors).unwrap();
        prop_assert_eq!(back, flat);
    }

    #[test]
    fn partition_assigns_every_sample_exactly_once(
        clients in 1usize..8,
        alpha in prop_oneof![Just(f64::INFINITY), 0.1f64..50.0],
        seed in 0u64..1000,
    ) {
        let data = synth_blobs(3, 4, 20, 0.05, seed).unwrap();
        let plan = partition(&data, clients, alpha, seed).unwrap();
        prop_assert_eq!(plan.assignments.len(), clients);
        let mut seen = vec![false; data.len()];
        for a in &plan.assignments {
            prop_assert!(a.windows(2).all(|w| w[0] < w[1]), "assignments must be sorted");
            for i in a {
                prop_assert!(!seen[*i], "sample {} assigned twice", i);
                seen[*i] = true;
            }
        }
        prop_assert!(seen.iter().all(|s| *s), "every sample must be assigned");
    }

    #[test]
    fn median_is_permutation_invariant_and_bounded(updates in update_map(2, 6), order in prop::collection::vec(0usize..100, 2..8)) {
        let refs: Vec<&FlatParams> = updates.values().collect();
        let med = median_agg(&refs).unwrap();
        let mut shuffled = refs.clone();
        let by = order.len() % shuffled.len().max(1);
        shuffled.rotate_left(by);
        let med2 = median_agg(&shuffled).unwrap();
        prop_assert_eq!(&med, &med2);
        for (j, v) in med.values().iter().enumerate() {
            let lo = refs.iter().map(|u| u.values()[j]).fold(Real::INFINITY, Real::min);
            let hi = refs.iter().map(|u| u.values()[j]).fold(Real::NEG_INFINITY, Real::max);
            prop_assert!(lo <= *v && *v <= hi, "median outside coordinate range");
        }
    }

    #[test]
    fn krum_keeping_everyone_is_fedavg(updates in update_map(6, 4)) {
        let refs: Vec<&FlatParams> = updates.values().collect();
        let avg = fedavg(&refs).unwrap();
        let (krum_avg, kept) = multi_krum(&updates, &KrumParams { f: 0, m: 6 }).unwrap();
        prop_assert_eq!(kept, (0..6).collect::<Vec<_>>());
        prop_assert_eq!(krum_avg, avg);
    }

    #[test]
    fn cluster_split_partitions_the_ids(updates in update_map(5, 3)) {
        let ClusterSplit { benign, suspects } = cluster_updates(&updates).unwrap();
        prop_assert!(benign.len() >= suspects.len(), "benign side must not be smaller");
        let mut all: Vec<usize> = benign.iter().chain(&suspects).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..5).collect::<Vec<_>>());
        prop_assert!(benign.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(suspects.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn ledger_scores_never_go_negative(flags in prop::collection::vec(prop::collection::vec(prop::bool::ANY, 4), 1..60)) {
        let mut ledger = PenaltyLedger::new(1.0, 0.75, Some(5.0));
        let mut banned_so_far = Vec::new();
        for round in flags {
            let mut benign = Vec::new();
            let mut suspects = Vec::new();
            for (id, suspect) in round.iter().enumerate() {
                if *suspect { suspects.push(id) } else { benign.push(id) }
            }
            ledger = update_ledger(&ledger, &ClusterSplit { benign, suspects });
            for id in 0..4 {
                prop_assert!(ledger.score(id) >= 0.0, "negative score for {}", id);
            }
            for b in &banned_so_far {
                prop_assert!(ledger.is_banned(*b), "ban must be permanent");
            }
            banned_so_far = ledger.banned().iter().copied().collect();
        }
    }

    #[test]
    fn poisoning_changes_exactly_the_requested_rows(dpr in 0.0f64..0.3, seed in 0u64..500) {
        let data = synth_blobs(4, 6, 25, 0.05, seed).unwrap();
        let spec = PoisonSpec {
            trigger: vec![(0, 1.0), (5, 1.0)],
            victim_class: 1,
            target_class: 2,
            dpr,
        };
        let expect = spec.poison_count(data.len());
        prop_assume!(expect <= data.class_indices(1).len());
        let poisoned = poison(&data, &spec, seed).unwrap();
        let changed: Vec<usize> = (0..data.len())
            .filter(|i| {
                poisoned.labels[*i] != data.labels[*i]
                    || poisoned.inputs.row(*i) != data.inputs.row(*i)
            })
            .collect();
        prop_assert_eq!(changed.len(), expect);
        for i in changed {
            prop_assert_eq!(data.labels[i], 1, "only victim rows may change");
            prop_assert_eq!(poisoned.labels[i], 2, "changed rows take the target label");
            prop_assert_eq!(poisoned.inputs[[i, 0]], 1.0);
            prop_assert_eq!(poisoned.inputs[[i, 5]], 1.0);
        }
    }

    #[test]
    fn fedavg_of_identical_updates_is_identity(update in params_strategy(8), copies in 1usize..6) {
        // Dividing the k-fold sum by k reproduces each coordinate up to
        // one rounding step; for powers of two it is exact.
        let refs: Vec<&FlatParams> = (0..copies).map(|_| &update).collect();
        let avg = fedavg(&refs).unwrap();
        for (a, b) in avg.values().iter().zip(update.values()) {
            let tol = (b.abs() * 1e-15).max(1e-300);
            prop_assert!((a - b).abs() <= tol, "{} vs {}", a, b);
        }
    }
}
