//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data (dimensions, ranges, file contents).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// One or more of the solver hypotheses fails; every violated condition is
    /// listed so the caller can see exactly what was refused.
    #[error("hypothesis violation: {}", .0.join("; "))]
    HypothesisViolation(Vec<String>),

    /// A block layout cannot support a valid split-weight assignment.
    #[error("layout infeasible: {0}")]
    LayoutInfeasible(String),

    /// An operator was evaluated outside the domain where it is defined
    /// (e.g. the smoothed KL gradient at a nonpositive log argument).
    #[error("domain violation: {0}")]
    DomainViolation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Parse failure in one of the text formats, with file and line context.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// A brute-force oracle found no feasible point on its grid.
    #[error("no feasible point: {0}")]
    NoFeasiblePoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
