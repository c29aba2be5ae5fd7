//! Round-level probability analysis and attack/defense metrics.

mod bounds;
mod danger;
mod metrics;

pub use bounds::{
    chernoff_majority_bound, exact_majority_prob, normal_majority_approx, MajorityQuery,
    SamplingModel,
};
pub use danger::{danger_zone_scan, DangerZoneReport, GridEntry};
pub use metrics::{asr, consistency_stat, mta, ConsistencyStat};
