use thiserror::Error;

/// Errors raised by the energy evaluators, solvers and sweep runner.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside the domain of the model; the message names the constraint.
    #[error("invalid parameter: {0}")]
    Domain(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("bisection predicate agrees at both bracket endpoints ({0})")]
    Bracket(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
