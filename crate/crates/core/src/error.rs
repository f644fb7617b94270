use thiserror::Error;

/// Errors raised by the geometry, probability, filtering and planning layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported dimension {0} (expected 2 or 3)")]
    UnsupportedDimension(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("semi-axis {index} is not positive ({value})")]
    NonPositiveAxis { index: usize, value: f64 },

    #[error("rotation is not orthonormal (max |RᵀR - I| = {deviation:.3e})")]
    NonOrthonormalRotation { deviation: f64 },

    #[error("matrix is not symmetric (max deviation {deviation:.3e})")]
    NonSymmetric { deviation: f64 },

    #[error("matrix is not positive definite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("ellipsoid centers coincide; the contact direction is undefined")]
    CoincidentCenters,

    #[error("no real eigenvalue found for the contact matrix")]
    ComplexMinimalEigenvalue,

    #[error("shifted contact matrix is singular (condition number {condition:.3e})")]
    SingularShift { condition: f64 },

    #[error("covariance is singular or not positive definite")]
    SingularSigma,

    #[error("series did not converge after {terms} terms (last term {last_term:.3e})")]
    NotConverged { terms: usize, last_term: f64 },

    #[error("monte carlo oracle degenerate: {indeterminate} of {samples} samples indeterminate")]
    OracleDegenerate { indeterminate: u64, samples: u64 },

    #[error("dynamics produced non-finite values")]
    NonFiniteDynamics,

    #[error("innovation covariance is singular (condition number {condition:.3e})")]
    SingularInnovationCovariance { condition: f64 },

    #[error("no constraint-satisfying control sequence found")]
    Infeasible,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
