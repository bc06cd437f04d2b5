use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid case: {0}")]
    InvalidCase(String),

    #[error("invalid dynamics data: {0}")]
    InvalidDynamics(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("inadmissible network: {0}")]
    Inadmissible(String),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("program build failed: {0}")]
    Build(String),

    #[error("relaxation is not exact: rank-1 ratio {ratio:.3e} exceeds {threshold:.1e}")]
    Inexact { ratio: f64, threshold: f64 },

    #[error("simulation: {0}")]
    Simulation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
