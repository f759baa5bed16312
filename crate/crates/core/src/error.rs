use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("numeric domain error in `{op}`: {detail}")]
    NumericDomain { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix for image `{image}` is still singular after {attempts} jitter attempts")]
    SingularMatrix { image: String, attempts: usize },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("unsupported format: {0}")]
    Format(String),

    #[error("incompatible checkpoint version {found} (this build reads version {expected})")]
    Incompatible { found: u16, expected: u16 },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("non-finite training loss at epoch {epoch}, step {step} (batch {batch:?}, parameter norm {param_norm})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        batch: Vec<String>,
        param_norm: f64,
    },

    #[error("I/O error on {path}: {source}")]
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

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::NumericDomain {
            op,
            detail: detail.into(),
        }
    }
}
