//! Per-client state held by the simulated federation.

use crate::data::{LabeledDataset, PoisonSpec};
use crate::error::{Error, Result};

/// One simulated client. Malicious clients already hold their poisoned
/// local set; `data` is whatever the client trains on.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: usize,
    pub data: LabeledDataset,
    pub is_malicious: bool,
    pub poison_spec: Option<PoisonSpec>,
}

impl ClientState {
    pub fn benign(id: usize, data: LabeledDataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid(format!("client {id} has no local data")));
        }
        Ok(ClientState { id, data, is_malicious: false, poison_spec: None })
    }

    pub fn malicious(id: usize, data: LabeledDataset, spec: PoisonSpec) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid(format!("client {id} has no local data")));
        }
        Ok(ClientState { id, data, is_malicious: true, poison_spec: Some(spec) })
    }
}
