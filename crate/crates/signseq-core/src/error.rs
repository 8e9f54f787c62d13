//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {node}")]
    NonFinite { node: String },

    #[error("tape error: {0}")]
    Tape(String),

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("file format error in {path}: {detail}")]
    Format { path: String, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error("training aborted: {0}")]
    Train(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable one-word category for machine-parsable CLI errors.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite { .. } => "numeric",
            Error::Tape(_) => "tape",
            Error::GradCheck(_) => "gradcheck",
            Error::Data(_) => "data",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::Vocab(_) => "vocab",
            Error::Train(_) => "train",
            Error::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }
}
