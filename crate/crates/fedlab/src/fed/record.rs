//! Per-round result records and streaming sinks.
//!
//! The CSV sink flushes after every row so that a killed run leaves a
//! readable prefix of complete rounds behind.

use std::fs::File;
use std::path::Path;

use crate::error::Result;

/// Everything measured about one federated round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    /// Main-task accuracy of the post-aggregation global model.
    pub mta: f64,
    /// Attack success rate on the triggered test set.
    pub asr: f64,
    /// Sampled client ids, ascending.
    pub sampled: Vec<usize>,
    /// How many of the sampled clients are malicious.
    pub malicious_in_sample: usize,
    /// Clients the defense kept for aggregation, ascending.
    pub benign: Vec<usize>,
    /// Clients the defense excluded this round, ascending.
    pub excluded: Vec<usize>,
    /// Whether a distillation pass ran this round.
    pub distilled: bool,
    /// Wall-clock duration of the round. Not part of the CSV schema, so
    /// that reruns stay byte-identical.
    pub wall_ms: u64,
}

pub const ROUNDS_CSV_HEADER: [&str; 9] = [
    "round",
    "mta",
    "asr",
    "sampled_count",
    "malicious_in_sample",
    "excluded_count",
    "distilled",
    "benign_ids",
    "excluded_ids",
];

fn join_ids(ids: &[usize]) -> String {
    ids.iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

impl RoundRecord {
    pub fn csv_fields(&self) -> [String; 9] {
        [
            self.round.to_string(),
            format!("{}", self.mta),
            format!("{}", self.asr),
            self.sampled.len().to_string(),
            self.malicious_in_sample.to_string(),
            self.excluded.len().to_string(),
            (self.distilled as u8).to_string(),
            join_ids(&self.benign),
            join_ids(&self.excluded),
        ]
    }
}

/// Receives records as rounds complete.
pub trait RecordSink {
    fn record(&mut self, rec: &RoundRecord) -> Result<()>;
}

/// Appends rows to a `rounds.csv` file, flushing after each one.
pub struct CsvSink {
    writer: csv::Writer<File>,
}

impl CsvSink {
    pub fn create(path: &Path) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(File::create(path)?);
        writer.write_record(ROUNDS_CSV_HEADER)?;
        writer.flush()?;
        Ok(CsvSink { writer })
    }
}

impl From<csv::Error> for crate::Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => crate::Error::Io(io),
            other => crate::Error::Format(format!("csv error: {other:?}")),
        }
    }
}

impl RecordSink for CsvSink {
    fn record(&mut self, rec: &RoundRecord) -> Result<()> {
        self.writer.write_record(rec.csv_fields())?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Keeps records in memory, for tests and library callers.
#[derive(Default)]
pub struct MemorySink {
    pub records: Vec<RoundRecord>,
}

impl RecordSink for MemorySink {
    fn record(&mut self, rec: &RoundRecord) -> Result<()> {
        self.records.push(rec.clone());
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl RecordSink for NullSink {
    fn record(&mut self, _rec: &RoundRecord) -> Result<()> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record() -> RoundRecord {
        RoundRecord {
            round: 3,
            mta: 0.85,
            asr: 0.0125,
            sampled: vec![1, 4, 9],
            malicious_in_sample: 1,
            benign: vec![1, 4],
            excluded: vec![9],
            distilled: false,
            wall_ms: 12,
        }
    }

    #[test]
    fn csv_fields_are_stable() {
        let fields = sample_record().csv_fields();
        assert_eq!(
            fields,
            [
                "3".to_string(),
                "0.85".to_string(),
                "0.0125".to_string(),
                "3".to_string(),
                "1".to_string(),
                "1".to_string(),
                "0".to_string(),
                "1;4".to_string(),
                "9".to_string(),
            ]
        );
    }

    #[test]
    fn sink_writes_header_and_flushes_each_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rounds.csv");
        let mut sink = CsvSink::create(&path).unwrap();
        sink.record(&sample_record()).unwrap();

        // Row must be on disk before the sink is dropped.
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], ROUNDS_CSV_HEADER.join(","));
        assert!(lines[1].starts_with("3,0.85,0.0125,"));
    }
}
