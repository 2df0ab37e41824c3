use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = T2lError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum T2lError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical instability: {0}")]
    NumericalInstability(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("autocorrelation undefined: {0}")]
    UndefinedAcf(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("training diverged at epoch {epoch}, step {step}: non-finite loss")]
    TrainingDiverged { epoch: usize, step: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("incompatible artifact {path}: {message}")]
    Incompatible { path: PathBuf, message: String },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("unknown {kind} `{name}` (registered: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl T2lError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        T2lError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        T2lError::InvalidArgument(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        T2lError::Shape(msg.into())
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        T2lError::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
