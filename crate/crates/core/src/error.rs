use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("nonlinear solve did not converge at step {step} after {} iterations (last residual {:.3e})",
        residuals.len(), residuals.last().copied().unwrap_or(f64::NAN))]
    NonConvergence { step: usize, residuals: Vec<f64> },

    #[error("step-size condition violated: lambda*tau_j^alpha = {value:.6e} >= 1/Gamma(2-alpha) = {cap:.6e} at j = {step}")]
    StepCondition { step: usize, value: f64, cap: f64 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
