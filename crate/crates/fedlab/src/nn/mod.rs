//! Minimal dense/conv network engine with explicit backprop.
//!
//! Everything trains with plain SGD on f64 (or f32 via the `real32`
//! feature). Parameters live in a single flat vector so that federated
//! aggregation, distance computation, and checkpointing stay trivial.

mod layers;
mod network;
mod params;
mod train;

pub use layers::LayerSpec;
pub use network::{backward, forward, forward_trace, Arch, Classifier, Generator, Trace};
pub use params::{load_checkpoint, save_checkpoint, FlatParams, ParamEntry, ParamTensor};
pub use train::{
    l1_logit_grad, l1_logit_loss, softmax_xent, train_local, TrainingConfig,
};
