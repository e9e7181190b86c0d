use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("non-finite value in field at entry {0}")]
    NonFinite(usize),

    #[error("exponent p = {0} is outside the admissible range [1, inf)")]
    InvalidExponent(f64),

    #[error("density is negative ({value}) at quadrature point {point}")]
    NegativeDensity { point: usize, value: f64 },

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),

    #[error("dual element does not match residual: {0}")]
    KindMismatch(String),

    #[error("multipliers vanish simultaneously (R = 0)")]
    VanishingMultipliers,

    #[error("compatibility check failed: {0}")]
    Infeasible(String),

    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("field file: {0}")]
    FieldFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
