use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("eigendecomposition did not converge after {sweeps} sweeps")]
    EigenNoConvergence { sweeps: usize },
    #[error("maps were not fitted on every pixel")]
    UnfittedMaps,
    #[error("all loss weights are zero")]
    NoObjective,
    #[error("non-finite gradient from the {term} term")]
    NonFiniteGradient { term: String },
    #[error("optimization diverged at iteration {iteration}: {breakdown}")]
    Diverged { iteration: usize, breakdown: String },
    #[error("empty region: {0}")]
    EmptyRegion(String),
}

pub type Result<T> = core::result::Result<T, Error>;
