use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },
    #[error("no face found")]
    NoFace,
    #[error("config error: {0}")]
    Config(String),
    #[error("incompatible checkpoint: {0}")]
    Compat(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidInput(msg.into())
    }

    pub fn shape(expected: &[usize], got: &[usize]) -> Self {
        Self::Shape {
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }

    /// Process exit code: 1 validation/data, 2 config/compatibility, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Compat(_) => 2,
            Self::Numerical(_) => 3,
            _ => 1,
        }
    }
}
