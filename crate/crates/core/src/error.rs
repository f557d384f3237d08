use std::path::PathBuf;

/// Errors produced anywhere in the identification toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error at `{path}`: {message}")]
    Validation { path: String, message: String },

    #[error("coupling block `{0}` is singular")]
    SingularCoupling(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("spring on joint `{0}` has degenerate geometry (zero attachment distance)")]
    DegenerateSpring(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("signal error: {0}")]
    Signal(String),

    #[error("torque channel `{0}` has zero range")]
    ZeroRange(String),

    #[error("regressor is rank deficient: rank {rank} < {cols} columns")]
    RankDeficient { rank: usize, cols: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse(_)
                | Error::Validation { .. }
                | Error::Dimension { .. }
                | Error::InvalidArgument(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
