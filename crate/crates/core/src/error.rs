//! Error taxonomy for the crate.
//!
//! Configuration errors (bad grid sizes, malformed domain specs, shape
//! mismatches) are separated from numerical failures (loss of the spectral
//! dichotomy, ill-conditioned eigenbases, factorization breakdowns) so the
//! command-line driver can map the former to usage errors and the latter to
//! run failures.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, HelmError>;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum HelmError {
    /// A constructor or operation was handed parameters that violate its
    /// contract (sizes, exponent ranges, monotonicity, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Two values that must live on the same grid (or have the same shape)
    /// do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A domain specification is inconsistent (period mismatch, Lipschitz
    /// bound violated by samples, non-finite boundary values, ...).
    #[error("invalid domain: {0}")]
    Domain(String),

    /// Extraction of the stabilizing solvent from the operator pencil could
    /// not certify the spectral dichotomy (wrong stable count, thin margins,
    /// or an ill-conditioned basis).
    #[error("pencil extraction failed: {0}")]
    Pencil(String),

    /// A linear solve or factorization inside one of the solvers broke down.
    #[error("solver failure: {0}")]
    Solver(String),

    /// Underlying dense linear algebra (LAPACK) reported a failure.
    #[error("linear algebra backend: {0}")]
    LinAlg(#[from] ndarray_linalg::error::LinalgError),

    /// Field serialization or deserialization failed structurally.
    #[error("field I/O: {0}")]
    FieldIo(String),

    /// Plain I/O error while reading or writing artifacts.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// CSV layer error while reading or writing fields.
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HelmError {
    /// True when the error is a usage/configuration problem rather than a
    /// numerical failure; drivers map these to a distinct exit status.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            HelmError::Config(_) | HelmError::Shape(_) | HelmError::Domain(_)
        )
    }
}
