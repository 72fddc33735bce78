use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("unknown variable id {0}")]
    UnknownVariable(usize),
    #[error("invalid intervention: {0}")]
    InvalidIntervention(String),
    #[error("simulation diverged: variable `{var}` produced a non-finite value at t={t}")]
    Divergence { var: String, t: i64 },
    #[error("abduction unsupported for variable `{0}`")]
    UnsupportedAbduction(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("rank-deficient design while fitting `{0}`")]
    FitDegenerate(String),
    #[error("bound precondition violated: {0}")]
    BoundPrecondition(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
