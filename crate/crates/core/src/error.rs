use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid effect: {0}")]
    InvalidEffect(String),

    #[error("invalid POVM: {0}")]
    InvalidPovm(String),

    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("probability {0} lies outside [0, 1]")]
    ProbabilityOutOfRange(f64),

    #[error(
        "optimizer did not converge after {iterations} iterations \
         (best value {best_value}, residual {residual:e}, gap {gap:e})"
    )]
    NotConverged {
        best_value: f64,
        residual: f64,
        gap: f64,
        iterations: usize,
    },

    #[error("ensemble barycenter differs from the purified marginal by {distance:e}")]
    BarycenterMismatch { distance: f64 },

    #[error("ensemble member {index} lies outside the support of the barycenter (distance {distance:e})")]
    MemberOutsideSupport { index: usize, distance: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid_parameter(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
