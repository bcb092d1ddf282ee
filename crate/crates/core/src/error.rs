use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("dataset too short: {what} needs at least {required} rows, got {actual}")]
    TooShort {
        what: String,
        required: usize,
        actual: usize,
    },

    #[error("feature `{0}` has zero variance")]
    ZeroVariance(String),

    #[error("training diverged at epoch {epoch}: last finite loss {last_finite_loss:?}")]
    Diverged {
        epoch: usize,
        last_finite_loss: Option<f64>,
    },

    #[error("all {trials} tuning trials failed: {summary}")]
    AllTrialsFailed { trials: usize, summary: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("environment: {0}")]
    Env(String),

    #[error("report: {0}")]
    Report(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

/// Rejects NaN and infinities with a labelled diagnostic.
pub(crate) fn ensure_finite(value: f64, context: impl FnOnce() -> String) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { context: context() })
    }
}
