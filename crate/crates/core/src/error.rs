use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("matrix is singular or not strictly positive definite")]
    Singular,
    #[error("block {block}: local covariance is not positive definite")]
    NotPd { block: usize },
    #[error("block {block}, component {component}: no increments")]
    EmptyBlock { block: usize, component: usize },
    #[error("block {block}: no explanatory observation")]
    EmptyExplanatoryBlock { block: usize },
    #[error("block {block}, component {component}: need at least 2 increments for pre-averaging")]
    BlockTooSmall { block: usize, component: usize },
    #[error("expected 2 to 4 arguments, got {0}")]
    BadArity(usize),
    #[error("contraction condition violated (norm {0})")]
    ContractionViolated(f64),
    #[error("objective is not finite")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("no usable blocks")]
    NoUsableBlocks,
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
