use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("unknown token id {0}")]
    UnknownToken(u32),
    #[error("range error: {0}")]
    Range(String),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("format/version mismatch: {0}")]
    Version(String),
    #[error("vocabulary mismatch: {0}")]
    Vocab(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
