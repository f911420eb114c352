use std::io;

use thiserror::Error;

pub type Result<T, E = IdlaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum IdlaError {
    #[error("invalid dimension {0}")]
    InvalidDimension(i64),
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid level set: {0}")]
    InvalidLevel(String),
    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("function not defined at {0:?}")]
    OutsideDomain(Vec<i32>),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl IdlaError {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            IdlaError::Resource(_) => 3,
            IdlaError::Io(_) | IdlaError::Json(_) => 1,
            _ => 2,
        }
    }
}
