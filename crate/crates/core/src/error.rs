//! Crate-wide error type and process exit-code mapping.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes; the message names both shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Invalid configuration value or file.
    #[error("configuration error: {0}")]
    Config(String),

    /// Bad input data (out-of-range ids, malformed records, missing files).
    #[error("data error: {0}")]
    Data(String),

    /// A caller violated an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Numerical failure (singular system, non-finite values).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Backward called without a cached forward pass.
    #[error("state error: {0}")]
    State(String),

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code: 0 success, 2 config error, 3 data error, 4 numerical error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io(_) | Error::Json(_) => 3,
            Error::Numerical(_) | Error::Diverged { .. } => 4,
            Error::Dimension(_) | Error::Contract(_) | Error::State(_) => 4,
        }
    }
}
