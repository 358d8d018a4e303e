//! Error type shared by the whole toolkit.
//!
//! Variants are grouped by how a caller should react: bad inputs
//! ([`Error::InvalidParam`], [`Error::Config`]) are user errors, the
//! numerical variants mean the requested computation does not exist or was
//! not reached (unstable system, diverging orbit, failed convergence), and
//! [`Error::Io`] wraps filesystem problems from the output writers.

use thiserror::Error;

/// Convenience alias used by every fallible function in the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter fails validation (wrong sign, out of range, missing).
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: String, reason: String },

    /// A run configuration file could not be parsed or is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A small denominator in the classical orbit expansion signals a
    /// resonance between the modulation and the mechanical frequency.
    #[error(
        "orbit expansion: near-resonant denominator {magnitude:.3e} at \
         harmonic n = {n}, order j = {j}; the expansion is invalid here"
    )]
    ResonantDenominator { n: i32, j: usize, magnitude: f64 },

    /// A time integration left the basin of the attractor.
    #[error("{context}: trajectory diverged at t = {t:.6e} s (norm {norm:.3e})")]
    Divergence { context: String, t: f64, norm: f64 },

    /// An operation that requires a stable system was given an unstable one.
    #[error("{context}: system is unstable ({detail})")]
    Unstable { context: String, detail: String },

    /// A covariance matrix lost the properties of a physical quantum state.
    #[error("{context}: covariance matrix is not physical ({detail})")]
    NonPhysical { context: String, detail: String },

    /// An iterative scheme (quadrature, averaging, root finding) did not
    /// reach its tolerance within the allowed work budget.
    #[error("{context}: failed to converge ({detail})")]
    Convergence { context: String, detail: String },

    /// A linear-algebra factorization failed on the given matrix.
    #[error("{context}: {detail}")]
    Linalg { context: String, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Shorthand for [`Error::InvalidParam`].
    pub fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParam { name: name.into(), reason: reason.into() }
    }
}
