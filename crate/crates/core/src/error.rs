//! Error type shared by all pipeline stages.

use thiserror::Error;

/// Errors surfaced by samplers, fitters and estimators.
///
/// Anything that indicates a caller bug (dimension mismatch, empty ensemble,
/// invalid configuration) is reported through this enum rather than by
/// panicking, so the CLI can print a clean message.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is outside its legal range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Vector or matrix dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Every particle has zero drift, so no adaptive time step exists.
    #[error("degenerate drift: all particle drifts are zero, adaptive time step undefined")]
    DegenerateDrift,

    /// A sampler step produced a non-finite particle state.
    #[error("sampler diverged at iteration {iteration}: non-finite particle state")]
    StepDiverged {
        /// Ensemble iteration index at which divergence was detected.
        iteration: usize,
    },

    /// A numerical routine left its domain (NaN/Inf or an impossible value).
    #[error("numerical failure in {context}: {detail}")]
    Numerical {
        /// Routine that failed.
        context: &'static str,
        /// Human-readable description of the failure.
        detail: String,
    },

    /// Mixture fitting could not produce a usable model.
    #[error("mixture fit failed: {0}")]
    FitFailed(String),

    /// Too many repetitions or samples failed for an aggregate to be
    /// trustworthy (divergence or weight-exclusion budget exceeded).
    #[error("experiment invalid: {0}")]
    ExperimentInvalid(String),

    /// An unknown limit-state identifier was requested from the registry.
    #[error("unknown limit state `{0}` (known: linear, four-branches, darcy)")]
    UnknownLsf(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
