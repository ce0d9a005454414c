use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the library.
///
/// Variants are grouped by how a caller is expected to react: structural and
/// configuration problems are caller bugs, numeric problems come from the
/// data or the optimisation, and format problems from files on disk.
#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structural(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("batch too small: need at least {needed} rows, got {got}")]
    BatchTooSmall { needed: usize, got: usize },
    #[error("anchor {0} cannot be paired with itself")]
    SelfPair(usize),
    #[error("row {row} is not unit-norm (norm {norm})")]
    Normalization { row: usize, norm: f64 },
    #[error("degenerate batch: {0}")]
    DegenerateBatch(&'static str),
    #[error("level {level} out of range for {levels} levels")]
    Range { level: usize, levels: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("view pairing error: {0}")]
    Pairing(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
