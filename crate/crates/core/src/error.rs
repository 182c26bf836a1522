use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("size cap exceeded: {0}")]
    CapExceeded(String),
    #[error("pseudoinverse failed at node {0}")]
    Pseudoinverse(usize),
    #[error("range condition violated: {0}")]
    Range(String),
    #[error("indefinite curvature: {0}")]
    Indefinite(String),
    #[error("path {path} blew up at step {step}")]
    BlowUp { path: usize, step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
