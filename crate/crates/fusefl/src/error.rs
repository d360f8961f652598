//! Crate-wide error type and result alias.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad layer dims, bad flags, bad config file).
    #[error("config error: {0}")]
    Config(String),

    /// Tensor/layer shape mismatch, with the offending layer index.
    #[error("shape mismatch at layer {layer}: expected {expected}, got {got}")]
    Shape {
        layer: usize,
        expected: String,
        got: String,
    },

    /// Invalid runtime input (labels out of range, empty batch, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Dataset file could not be loaded.
    #[error("load error: {0}")]
    Load(String),

    /// Data partitioning failed.
    #[error("partition error: {0}")]
    Partition(String),

    /// Block fusion failed (incompatible branches).
    #[error("fusion error: {0}")]
    Fusion(String),

    /// Probe could not run on the given model/dataset.
    #[error("probe error: {0}")]
    Probe(String),

    /// Checkpoint file is malformed or corrupt.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Invariant violation inside the engine; indicates a bug.
    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 2 for configuration mistakes, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
