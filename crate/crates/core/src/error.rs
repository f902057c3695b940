use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("invalid mismatch parameters: {0}")]
    InvalidParams(String),

    #[error("infeasible decoy statistics: {0}")]
    InfeasibleStatistics(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("key exhausted: need {needed} bits, {available} available")]
    KeyExhausted { needed: u64, available: u64 },

    #[error("bad key file: {0}")]
    KeyFormat(String),

    #[error("seed required for Monte Carlo mode")]
    SeedRequired,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
