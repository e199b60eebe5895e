use thiserror::Error;

/// Errors raised by covariance construction, filtering, and the experiment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.6e}, max {max_eigenvalue:.6e})")]
    NotPsd {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("covariance factorization failed: {0}")]
    FactorizationFailure(String),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("covariance sum is numerically singular (min eigenvalue {min_eigenvalue:.6e}, max {max_eigenvalue:.6e})")]
    SingularSum {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("watermark gives the attacker no correlation leverage (tr(H C_w) = {0:.3e})")]
    DegenerateWatermark(f64),

    #[error("matrix is not Toeplitz (diagonal {diagonal} deviates by {deviation:.3e})")]
    NotToeplitz { diagonal: isize, deviation: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
