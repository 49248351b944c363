//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// `Config` maps to process exit code 2, the numerical/protocol variants to
/// exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad keys, indivisible grid, missing file keys).
    #[error("configuration error: {0}")]
    Config(String),

    /// Numerical fault: zero pivot, degenerate fiber segment, NaN state.
    #[error("numerical fault: {0}")]
    Numerical(String),

    /// Parallel protocol violation: unresolvable foreign key after a
    /// migration merge, topology mismatch, lost worker.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Delta-kernel stencil reached outside the resident-plus-halo region,
    /// which signals a halo width misconfiguration.
    #[error("stencil overran halo: {0}")]
    HaloOverrun(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
