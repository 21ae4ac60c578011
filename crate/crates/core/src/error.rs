use thiserror::Error;

use crate::solver::IterationTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{what} did not converge within {iterations} iterations (last estimate {last:e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        last: f64,
    },

    #[error("iteration {iteration} produced a non-finite state")]
    Diverged {
        iteration: usize,
        trace: Option<Box<IterationTrace>>,
    },

    #[error("oracle returned a non-finite value: {0}")]
    Oracle(String),

    #[error("lower-level problem appears infeasible: {0}")]
    Infeasible(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("theory constants unavailable: {0}")]
    TheoryConstantsUnavailable(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
