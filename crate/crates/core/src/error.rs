use thiserror::Error;

/// Error type shared by all modules of the simulator.
#[derive(Debug, Error)]
pub enum ScleError {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical procedure failed to meet its tolerance.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The caller violated an API contract (mismatched grids, too few samples, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A model definition is inconsistent (basis not closed, invalid density matrix, ...).
    #[error("model definition error: {0}")]
    ModelDefinition(String),

    /// Configuration file rejected.
    #[error("config error: {0}")]
    Config(String),

    /// An ensemble run failed as a whole.
    #[error("run error: {0}")]
    Run(String),

    /// A single trajectory produced non-finite values; counted and excluded
    /// by the ensemble rather than propagated.
    #[error("trajectory diverged: {0}")]
    TrajectoryDiverged(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ScleError>;
