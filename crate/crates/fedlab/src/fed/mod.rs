//! Federated training loop: client sampling, local training, aggregation
//! through a pluggable defense, and per-round records.

mod client;
mod config;
mod record;
mod round;

pub use client::ClientState;
pub use config::FederationConfig;
pub use record::{CsvSink, MemorySink, NullSink, RecordSink, RoundRecord, ROUNDS_CSV_HEADER};
pub use round::{
    fedavg, sample_clients, Defense, DefenseVerdict, Federation, RoundInput,
};
