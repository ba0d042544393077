use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// The velocity Hessian lost invertibility (or its pivot ratio exceeded the bound).
    #[error("singular velocity Hessian at t={t}: pivot ratio {ratio:e} exceeds {bound:e}")]
    SingularHessian { t: f64, ratio: f64, bound: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("step size collapsed to {step:e} at t={t}")]
    StepSizeCollapse { t: f64, step: f64 },

    #[error("maximum number of integrator steps ({0}) exceeded")]
    TooManySteps(usize),

    #[error("non-finite value produced at t={t}")]
    NonFinite { t: f64 },

    #[error("invalid start state: {0}")]
    InvalidStart(String),

    #[error("no sign change of the guard inside the bracket [{t0}, {t1}]")]
    BracketInvalid { t0: f64, t1: f64 },

    #[error("guard crossing at t={t} rejected by direction function (d={direction:e})")]
    DirectionRejected { t: f64, direction: f64 },

    #[error("guard jumped at t={t}: rate {rate:e} exceeds the configured bound")]
    GuardDiscontinuity { t: f64, rate: f64 },

    #[error("reset map changed time from {before} to {after}")]
    ResetChangedTime { before: f64, after: f64 },

    #[error("negative discriminant {0:e} in polar reset")]
    NegativeDiscriminant(f64),

    #[error("chart singularity: {0}")]
    ChartSingularity(String),

    #[error("reduction not defined: {0}")]
    NotInvariant(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
