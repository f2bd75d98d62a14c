use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("integral did not converge: {reason} (truncation point {truncation_point}, {n_evals} evaluations)")]
    NonConvergence {
        reason: String,
        truncation_point: f64,
        n_evals: usize,
    },

    #[error("evaluation point {point} outside the declared window [{lo}, {hi}]")]
    WindowTooSmall { point: f64, lo: f64, hi: f64 },

    #[error("ODE integration failed: {0}")]
    Ode(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("inversion failed: {0}")]
    Inversion(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn precondition(msg: impl Into<String>) -> Error {
    Error::Precondition(msg.into())
}
