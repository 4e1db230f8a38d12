//! Stream files, the synthetic generator and results tables.

mod results;
mod stream;
mod synth;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use results::{
    aggregate, append_results, read_results, read_step_log, rolling_coverage, write_step_log,
    Aggregate, MeanStd, ResultRow,
};
pub use stream::{load_stream, Stream, StreamHeader, StreamReader, StreamRecord};
pub use synth::{
    emit_probabilities, generate_stream, DriftKind, DriftProfile, GeneratorMeta, QualitySchedule,
    SyntheticSpec,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.as_ref().map_or_else(|| "<stream>".to_string(), |p| p.display().to_string()))]
    Io {
        path: Option<PathBuf>,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid stream header: {0}")]
    InvalidHeader(String),
    #[error("record {record} (line {line}): {reason}")]
    InvalidRecord {
        record: usize,
        line: usize,
        reason: String,
    },
    #[error("record {record} (line {line}) is truncated: file ends mid-record")]
    Truncated { record: usize, line: usize },
    #[error("stream declares {expected} records but holds {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("cannot aggregate: {0}")]
    Mismatch(String),
    #[error("generator: {0}")]
    Generator(String),
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: Some(path.to_path_buf()),
            source,
        }
    }

    pub(crate) fn csv(path: &Path, source: csv::Error) -> Self {
        Self::Csv {
            path: path.to_path_buf(),
            source,
        }
    }
}
