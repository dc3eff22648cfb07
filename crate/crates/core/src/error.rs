use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("modulus must lie in the upper half plane, got Im(tau) = {0}")]
    NonPositiveImTau(f64),

    #[error("line bundle degree must be nonzero (degenerate curvature)")]
    ZeroDegree,

    #[error("model needs at least one torus factor")]
    EmptyModel,

    #[error("tolerance must be positive, got {0}")]
    NonPositiveEps(f64),

    #[error("theta level must be at least 1, got {0}")]
    InvalidLevel(i64),

    #[error("characteristic {characteristic} out of range for level {level}")]
    InvalidCharacteristic { level: u32, characteristic: u32 },

    #[error("tensor power must be at least 1, got {0}")]
    InvalidPower(i64),

    #[error("quadrature resolution {got} below floor {floor}")]
    ResolutionBelowFloor { got: usize, floor: usize },

    #[error("gram matrix not positive definite: smallest eigenvalue {min_eigenvalue:.3e}")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("homogeneous vector vanishes (norm {0:.3e})")]
    ZeroVector(f64),

    #[error("fit needs at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("non-positive value {value:e} at k = {k}")]
    NonPositiveSample { k: f64, value: f64 },

    #[error("kernel underflow at k = {k}")]
    Underflow { k: u32 },

    #[error("unsupported: {0}")]
    Unsupported(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
