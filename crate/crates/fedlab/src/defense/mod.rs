//! Aggregation defenses: coordinate-wise median, Multi-Krum, and the
//! cluster/monitor/distill pipeline with its lightweight variant.

mod baselines;
mod cluster;
mod distill;
mod ledger;
mod pipeline;

pub use baselines::{median_agg, multi_krum, KrumParams};
pub use cluster::{cluster_updates, ward_distance, ClusterSplit};
pub use distill::{distill, ensemble_logits, DistillConfig};
pub use ledger::{filter_by_ledger, update_ledger, PenaltyLedger};
pub use pipeline::{
    drop_pipeline, droplet_pipeline, DropDefense, DropletDefense, FedAvgDefense, MedianDefense,
    MultiKrumDefense, PipelineOutcome,
};
