use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("insufficient data: need trajectory length T >= {required}, got T = {actual}")]
    InsufficientData { required: usize, actual: usize },

    #[error("inconsistent data: relative residual {residual:.3e} exceeds tolerance {tol:.1e}")]
    InconsistentData { residual: f64, tol: f64 },

    #[error("task diversity violated: kernel intersection has dimension {achieved}, expected {expected}")]
    DiversityViolation { expected: usize, achieved: usize },

    #[error("persistency of excitation violated: {0}")]
    Persistency(String),

    #[error("no rank saturation detected up to window depth {r_max}")]
    NoRankSaturation { r_max: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
