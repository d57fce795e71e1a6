use std::path::PathBuf;

/// Errors produced by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint hash mismatch: header says {expected}, content hashes to {actual}")]
    HashMismatch { expected: String, actual: String },
    #[error("tensor offset out of range: {0}")]
    OffsetRange(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("training diverged at step {step}: {reason}")]
    Diverged {
        step: usize,
        reason: String,
        last_good: Option<PathBuf>,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
