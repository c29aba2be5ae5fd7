//! Datasets: synthetic blobs, IDX image files, federation partitioning,
//! and targeted backdoor poisoning.

mod dataset;
mod idx;
mod partition;
mod poison;

pub use dataset::{export_csv, split_train_test, synth_blobs, LabeledDataset};
pub use idx::{load_idx, write_idx_images, write_idx_labels};
pub use partition::{partition, PartitionPlan};
pub use poison::{poison, triggered_testset, PoisonSpec};
