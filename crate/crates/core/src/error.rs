use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by graph construction, solvers and IO.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A parameter combination violates a documented precondition
    /// (interaction radius, stability bound, ...).
    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("degenerate graph: node {node} {reason}")]
    DegenerateGraph { node: usize, reason: String },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// The PDE coefficients fall outside the well-posed regime `eta * gamma_eps < 1`.
    #[error("regime error: {0}")]
    Regime(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Malformed binary input.
    #[error("parse error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Wraps a failure from one row of a multi-row experiment.
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Configuration(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a context label (for example the failing row of a study).
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
