use thiserror::Error;

pub type Result<T> = std::result::Result<T, LoccError>;

#[derive(Debug, Error)]
pub enum LoccError {
    #[error("invalid partition: {0}")]
    InvalidSpace(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("operator is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("operator is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("local measurement is incomplete (deviation from identity {deviation:e})")]
    IncompleteMeasurement { deviation: f64 },

    #[error("node {0} is not a leaf")]
    NotLeaf(usize),

    #[error("node {0} does not exist")]
    NodeNotFound(usize),

    #[error("{what} exceeds cap: {count} > {cap}")]
    CapExceeded { what: &'static str, count: usize, cap: usize },

    #[error("target is not proportional to any generator")]
    TargetNotGenerator,

    #[error("unknown builtin `{0}`")]
    UnknownBuiltin(String),

    #[error("vanishing normalisation at path sample {index} (value {value:e})")]
    VanishingDenominator { index: usize, value: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("linear program failed: {0}")]
    Solver(String),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}
