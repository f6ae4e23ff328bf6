//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by estimation, smoothing, and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Dimensions or layouts of inputs do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An estimation step cannot be carried out on the given data.
    #[error("estimation failed: {0}")]
    Estimation(String),

    /// Bandwidth selection found no admissible candidate.
    #[error("bandwidth selection failed: {0}")]
    Selection(String),

    /// The test statistic is not defined because its variance collapsed.
    #[error("degenerate test: {0}")]
    DegenerateTest(String),

    /// A construction-level invariant was violated during a run.
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
