use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("polynomial of degree zero has no roots")]
    DegreeTooLow,

    #[error("transfer function has a pole at omega = {omega} rad/s")]
    PoleAtFrequency { omega: f64 },

    #[error("feedback interconnection is singular (zero return difference)")]
    SingularLoop,

    #[error("system is unstable; the supremum norm is unbounded")]
    UnstableSystem,

    #[error("system is improper (numerator degree exceeds denominator degree)")]
    ImproperSystem,

    #[error("invalid topology or operating point: {0}")]
    InvalidTopology(String),

    #[error("degenerate converter state: {0}")]
    DegenerateState(String),

    #[error("infeasible sharing allocation: {0}")]
    InfeasibleAllocation(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("synthesis found no stabilizing parameters (best cost {best_cost:.3e})")]
    SynthesisFailed { best_cost: f64 },

    #[error("simulation diverged at t = {t:.6} s")]
    DivergentSimulation { t: f64 },

    #[error("measurement window unusable: {0}")]
    InsufficientWindow(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
