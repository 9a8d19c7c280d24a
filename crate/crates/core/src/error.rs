//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by simulation, estimation and the bench front end.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A path or weight became non-finite. `step` is the Euler step index at
    /// which the state first left the finite range (0 when the overflow was
    /// detected outside the stepping loop, e.g. in a weight product).
    #[error("numerical overflow at step {step}: {context}")]
    NumericalOverflow { step: usize, context: &'static str },

    /// Too many samples were dropped for the estimate to be trusted.
    /// The partially-filled report is still carried for inspection.
    #[error("estimation degraded: {overflowed} of {total} samples overflowed")]
    EstimationDegraded {
        overflowed: u64,
        total: u64,
        report: Box<crate::mlmc::EstimatorReport>,
    },

    #[error("config error at line {line}: key `{key}`: {message}")]
    ConfigParse {
        line: usize,
        key: String,
        message: String,
    },

    /// A measured bias is statistically indistinguishable from zero, so a
    /// rate fit over it would be meaningless.
    #[error("insufficient resolution: {0}")]
    InsufficientResolution(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
