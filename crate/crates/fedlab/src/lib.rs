//! Desk-scale federated learning attack/defense laboratory.
//!
//! Simulates FedAvg image classification under targeted backdoor poisoning
//! and provides defenses: coordinate-wise median, Multi-Krum, and a
//! clustering + activity-monitoring + knowledge-distillation pipeline.
//! Also included: exact and approximate probabilities of malicious-majority
//! rounds, and a reproducible experiment runner.

pub mod analysis;
pub mod config;
pub mod data;
pub mod defense;
pub mod error;
pub mod exp;
pub mod fed;
pub mod nn;
pub mod seeding;

pub use error::{Error, Result};

/// Scalar type for model parameters and dataset values.
#[cfg(not(feature = "real32"))]
pub type Real = f64;
/// Scalar type for model parameters and dataset values.
#[cfg(feature = "real32")]
pub type Real = f32;
