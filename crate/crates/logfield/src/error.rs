use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Invalid or inconsistent configuration / parameters.
    #[error("configuration error: {0}")]
    Config(String),
    /// Numerical failure (factorization, insufficient accuracy, ...).
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Problem size exceeds a dense-solve guard.
    #[error("size error: {0}")]
    Size(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
