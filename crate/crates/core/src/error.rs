use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),
    /// An input lies outside the set on which the quantity is defined.
    #[error("outside domain: {0}")]
    Domain(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("solver stalled: {0}")]
    Stalled(String),
    #[error("spectrum left the admissible cone: {0}")]
    ConeBreach(String),
    #[error("right-hand side invalid: {0}")]
    Rhs(String),
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
}
