use alloc::string::String;

/// Errors raised by the alignment pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("not a unit vector (norm {0})")]
    NotUnit(f64),
    #[error("invalid preference arc: {0}")]
    InvalidArc(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("enumeration cap exceeded: {classes} classes (cap {cap})")]
    EnumerationCap { classes: u64, cap: u64 },
    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("replay fraction {0} requested but the replay pool is empty")]
    EmptyReplayPool(f64),
    #[error("point ({x}, {y}) lies below the reference point")]
    BelowReference { x: f64, y: f64 },
    #[error("scorer failed: {0}")]
    Scorer(String),
}

pub type Result<T> = core::result::Result<T, Error>;
