use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("covariance is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPsd { eigenvalue: f64 },

    #[error("degenerate conditioning: {0}")]
    DegenerateConditioning(String),

    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),

    #[error("degenerate variable `{0}` (zero variance)")]
    DegenerateVariable(String),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parameter overflow: {0}")]
    ParameterOverflow(String),

    #[error("invalid pmf: {0}")]
    InvalidPmf(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
