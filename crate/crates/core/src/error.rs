use thiserror::Error;

/// Errors produced by the fitdnn library.
#[derive(Debug, Error)]
pub enum FitDnnError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("structural mismatch: {0}")]
    Structure(String),

    #[error("non-finite value at layer {layer}, node {node}")]
    NonFinite { layer: usize, node: usize },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FitDnnError>;
