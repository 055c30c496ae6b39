use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
///
/// `Contract` and `ShapeMismatch` indicate caller misuse; the CLI maps them to
/// exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("solver failure after {steps} steps: {reason}")]
    Solver {
        steps: usize,
        reason: String,
        last_finite: Vec<f64>,
    },

    #[error("instance {instance}: {source}")]
    Instance {
        instance: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("capability exceeded: {0}")]
    Capability(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
