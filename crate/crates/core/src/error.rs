use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("out of domain: {0}")]
    OutOfDomain(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("unsupported degree: segment {segment} has degree {degree}, expected at most {max}")]
    UnsupportedDegree {
        segment: usize,
        degree: usize,
        max: usize,
    },
    #[error("unsupported index: {0}")]
    UnsupportedIndex(String),
    #[error("inconsistent arguments: {0}")]
    InconsistentArguments(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("knot index n={n} exceeds the dense limit {limit}; use the symbolic knot view")]
    DenseLimit { n: String, limit: u32 },
    #[error("precision failure: {what} (achieved error {achieved:e})")]
    PrecisionFailure { what: String, achieved: f64 },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl LabError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        LabError::InvalidArgument(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        LabError::OutOfDomain(msg.into())
    }
}
