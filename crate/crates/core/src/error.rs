use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OqwError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is singular or ill-conditioned (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("channel is not primitive: {0}")]
    NotPrimitive(String),

    #[error("fixed point is not unique (eigenspace dimension {dimension})")]
    DegenerateFixedPoint { dimension: usize },

    #[error("walk is reducible: {0}")]
    Reducible(String),

    #[error("hypothesis violated: {detail} (offending eigenvalue {eigenvalue})")]
    HypothesisViolation { detail: String, eigenvalue: C64 },

    #[error("limit diverges: {0}")]
    Divergent(String),

    #[error("computation did not converge: {0}")]
    NonConvergent(String),

    #[error("enumeration budget exceeded ({branches} branches > {limit})")]
    BudgetExceeded { branches: u64, limit: u64 },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, OqwError>;
