use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema violation: {0}")]
    Schema(String),

    #[error("{path}: row {row}: {message}")]
    Parse { path: PathBuf, row: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate bins for feature `{0}`: quantile boundaries collapse on a constant column")]
    DegenerateBins(String),

    #[error("configuration space has {size} candidates, above the enumeration cap of {cap}")]
    EnumerationCap { size: u128, cap: u64 },

    #[error("non-finite training loss at epoch {epoch}, batch {batch}; lower the learning rate or check inputs")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("AUC is undefined when only one class is present")]
    UndefinedAuc,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
