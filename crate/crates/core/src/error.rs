use thiserror::Error;

/// Errors raised by mesh construction, assembly, time stepping and analysis.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("stabilized cells {0} and {1} share a face")]
    AdjacentStabilized(usize, usize),

    #[error("velocity changes sign along face {face} of cell {cell}")]
    MixedFaceSign { cell: usize, face: usize },

    #[error("stabilized cell {0}: {1}")]
    Stabilization(usize, String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("non-finite value in state at step {0}")]
    NonFinite(usize),

    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("at least {needed} mesh levels required, got {got}")]
    TooFewLevels { needed: usize, got: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config error: {0}")]
    Config(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
