use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {what} (value {value})")]
    Domain { what: &'static str, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("mass mismatch: {from} vs {to}")]
    MassMismatch { from: f64, to: f64 },

    #[error("solver failure at step {step}: {reason}")]
    Solver { step: usize, reason: String },

    #[error("clamping abort at step {step}: clamped mass {clamped} exceeds {threshold}")]
    Clamping {
        step: usize,
        clamped: f64,
        threshold: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl ToString, got: impl ToString) -> Error {
    Error::Shape {
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
