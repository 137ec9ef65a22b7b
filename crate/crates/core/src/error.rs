use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("improper transfer function: numerator degree {num} exceeds denominator degree {den}")]
    Improper { num: usize, den: usize },

    #[error("invalid transfer function: {0}")]
    InvalidTransferFunction(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("unstable system (spectral radius {0:.6} >= 1): infinite induced norm")]
    Unstable(f64),

    #[error("baseline not stabilizing: interconnection spectral radius {0:.6} >= 1")]
    NotStabilizing(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient history: need {needed} disturbance estimates, have {have}")]
    InsufficientHistory { needed: usize, have: usize },

    #[error("ill-posed interconnection: algebraic loop is singular")]
    IllPosed,
}

pub type Result<T> = std::result::Result<T, Error>;
