use thiserror::Error;

/// Errors raised by the analytic engine.
#[derive(Debug, Clone, Error)]
pub enum CoreError {
    #[error("degenerate covariance: variance {variance:.3e} below tolerance with covariance {covariance:.3e}")]
    DegenerateCovariance { variance: f64, covariance: f64 },

    #[error("covariance not PSD: |k12| exceeds sqrt(k11*k22) by {excess:.3e}")]
    NotPsd { excess: f64 },

    #[error("negative variance {0:.3e}")]
    NegativeVariance(f64),

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("pairing enumeration too large: {len} indices (cap {cap})")]
    EnumerationTooLarge { len: usize, cap: usize },

    #[error("non-finite input entry")]
    NonFiniteInput,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("fixed-point iteration did not converge (last iterate {last:.6e})")]
    NotConverged { last: f64 },

    #[error("negative q* supplied: {0:.3e}")]
    NegativeQ(f64),

    #[error("log of non-positive factor {0:.6e}")]
    LogOfNonPositive(f64),

    #[error("kernel matrix is singular or nearly singular; consider adding jitter")]
    SingularKernel,

    #[error("matrix not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("kernel indefinite: min eigenvalue {min_eig:.3e} below -{tol:.3e}")]
    IndefiniteKernel { min_eig: f64, tol: f64 },

    #[error("zero or near-zero eigenvalue {0:.3e} in spectral formula")]
    ZeroEigenvalue(f64),

    #[error("invalid architecture: {0}")]
    InvalidArch(String),
}
