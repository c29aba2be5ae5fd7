//! Federation-level configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::TrainingConfig;

/// Sizes, schedule, and seed of a federated run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    /// Total number of clients (`N`).
    pub total_clients: usize,
    /// Clients sampled each round (`C`).
    pub sampled_per_round: usize,
    /// Fraction of the federation controlled by the attacker.
    pub mcr: f64,
    /// Number of federated rounds.
    pub rounds: usize,
    /// Local training settings shared by every client.
    pub training: TrainingConfig,
    /// Top-level seed; all randomness derives from it.
    pub seed: u64,
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_clients == 0 {
            return Err(Error::config("federation.clients must be positive"));
        }
        if self.sampled_per_round == 0 || self.sampled_per_round > self.total_clients {
            return Err(Error::config(format!(
                "sampled_per_round must be in 1..={}, got {}",
                self.total_clients, self.sampled_per_round
            )));
        }
        if !(0.0..1.0).contains(&self.mcr) {
            return Err(Error::config(format!(
                "attack.mcr must be in [0, 1), got {}",
                self.mcr
            )));
        }
        if self.rounds == 0 {
            return Err(Error::config("federation.rounds must be positive"));
        }
        self.training.validate()
    }

    /// Number of malicious clients: `round(mcr * N)`.
    pub fn malicious_count(&self) -> usize {
        (self.mcr * self.total_clients as f64 + 0.5).floor() as usize
    }
}
