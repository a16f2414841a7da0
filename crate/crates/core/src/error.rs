use thiserror::Error;

/// Errors raised by the simulation, control and diagnostics routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("forcing covers [0, {available}] but the horizon is {required}")]
    ForcingTooShort { available: f64, required: f64 },

    #[error("blow-up at t = {t}: |y| = {magnitude} exceeds the cap {cap}")]
    BlowUp { t: f64, magnitude: f64, cap: f64 },

    #[error("empty grid: {0}")]
    EmptyGrid(&'static str),

    #[error("infeasible control problem: {reason}")]
    Infeasible {
        reason: String,
        /// Smallest horizon for which the construction is known to succeed, when one exists.
        minimal_horizon: Option<f64>,
    },

    #[error("bin configurations differ")]
    MismatchedBins,

    #[error("no events observed: {0}")]
    NoEvents(String),

    #[error("{0}")]
    Diagnostic(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(v: f64, what: &'static str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
