use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FkfpeError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("problem size {size} exceeds the solver cap of {cap} support points")]
    SizeCap { size: usize, cap: usize },

    #[error("solver did not converge after {iterations} iterations (marginal error {marginal_error:.3e})")]
    NonConvergence {
        iterations: usize,
        marginal_error: f64,
    },

    #[error("contraction violated: h * sup|D^2 psi| = {product:.4} must be < 1")]
    ContractionViolated { product: f64 },

    #[error("velocity leakage {leakage:.3e} exceeds the limit {limit:.1e}")]
    Leakage { leakage: f64, limit: f64 },

    #[error("empty measure")]
    EmptyMeasure,

    #[error("time {t} outside [0, {t_end})")]
    TimeOutOfRange { t: f64, t_end: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("test function support violation: {0}")]
    SupportViolation(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("missing required config key `{0}`")]
    MissingKey(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, FkfpeError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(FkfpeError::InvalidParameter(msg.into()))
}
