use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("invalid preset: {0}")]
    InvalidPreset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate jump model: {0}")]
    DegenerateModel(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("mesh too coarse for the implicit step: lipschitz {lipschitz} * dt {dt} >= 1")]
    MeshTooCoarse { lipschitz: f64, dt: f64 },

    #[error(
        "implicit step did not converge after {iterations} iterations (residual {residual:e})"
    )]
    ConvergenceFailure { iterations: usize, residual: f64 },

    #[error("regression estimator degenerate: {0}")]
    EstimatorDegenerate(String),

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("rate fit needs at least 4 points, got {0}")]
    InsufficientPoints(usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
