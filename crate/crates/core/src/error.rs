use std::path::PathBuf;

/// Errors produced anywhere in the library.
///
/// Variants fall into four families (configuration, data, numerical, I/O) so
/// front ends can map them onto distinct exit codes via [`Error::kind`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error at row {row}, column `{column}`: {reason}")]
    Parse {
        row: usize,
        column: String,
        reason: String,
    },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("non-finite value at diffusion step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error("non-finite training loss ({0})")]
    NonFiniteLoss(f64),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("tensor backend: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification of an [`Error`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. } | Error::Json(_) => ErrorKind::Config,
            Error::NonFinite { .. } | Error::NonFiniteLoss(_) | Error::Divergence(_) | Error::Tensor(_) => {
                ErrorKind::Numerical
            }
            Error::Data(_)
            | Error::InsufficientData(_)
            | Error::Parse { .. }
            | Error::Shape { .. }
            | Error::Checkpoint(_)
            | Error::Io { .. } => ErrorKind::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
