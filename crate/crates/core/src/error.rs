//! Error type shared by every module of the simulator.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AquilaError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AquilaError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("invalid policy parameter: {0}")]
    Policy(String),

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl AquilaError {
    pub(crate) fn dim(expected: usize, actual: usize) -> Self {
        AquilaError::Dimension { expected, actual }
    }
}

impl From<std::io::Error> for AquilaError {
    fn from(e: std::io::Error) -> Self {
        AquilaError::Io(e.to_string())
    }
}
