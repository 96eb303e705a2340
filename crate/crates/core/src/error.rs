//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or argument violates a documented precondition.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Dimension mismatch between related inputs.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The gain vector is identically zero, so the steering-vector
    /// normalization is undefined.
    #[error("all antenna gains are zero; steering normalization undefined")]
    ZeroGains,

    /// Rejection sampling failed to produce DoAs with the required
    /// minimum separation.
    #[error("could not draw {sources} DoAs with separation {min_sep_deg:.3} deg in {attempts} attempts")]
    DegenerateDoas {
        sources: usize,
        min_sep_deg: f64,
        attempts: usize,
    },

    /// A numerical routine failed (eigensolver non-convergence,
    /// non-finite loss or gradient, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
