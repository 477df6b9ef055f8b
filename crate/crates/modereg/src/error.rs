//! Shared error type for estimation, selection, and simulation routines.

use thiserror::Error;

/// Failure modes surfaced by the crate.
///
/// Numerical estimators fail loudly on degenerate inputs (singular local
/// designs, empty windows, zero-variance samples) instead of returning
/// garbage; callers decide whether to skip, retry, or abort.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("{name} must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },

    #[error("reliability ratio must lie in (0, 1], got {0}")]
    InvalidReliability(f64),

    #[error("error standard deviation must be nonnegative and finite, got {0}")]
    InvalidSigma(f64),

    #[error("local design matrix is numerically singular at x = {x}")]
    SingularDesign { x: f64 },

    #[error("fewer than {required} observations fall in the window around x = {x}")]
    InsufficientLocalData { x: f64, required: usize },

    #[error("sample is degenerate (zero variance)")]
    DegenerateSample,

    #[error("bandwidth selection failed: {0}")]
    SelectionFailed(String),

    #[error("SIMEX bandwidth selection requires a nondegenerate measurement-error model")]
    SimexWithoutError,

    #[error("Hausdorff distance is undefined for an empty set")]
    EmptySet,

    #[error("mode-curve grids do not match: {0}")]
    GridMismatch(String),

    #[error("oracle bandwidth search failed: {0}")]
    OracleSearchFailed(String),

    #[error("bandwidth formula left its domain: {0}")]
    FormulaDomain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
