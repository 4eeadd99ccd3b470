use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("time step {dt} violates the explicit cross-term bound {limit}")]
    Cfl { dt: f64, limit: f64 },
    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("empty sample set")]
    EmptySamples,
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("cylinder leaves the computed window: {0}")]
    CylinderExitsDomain(String),
    #[error("derivative paths disagree: closed form {closed:e}, finite differences {numeric:e}")]
    DerivativeMismatch { closed: f64, numeric: f64 },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
