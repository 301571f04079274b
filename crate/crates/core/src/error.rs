use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
///
/// Variants are grouped by the exit code the command-line front end maps
/// them to; see [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape error: {0}")]
    InputShape(String),

    #[error("non-finite input: {0}")]
    NumericInput(String),

    #[error("forward cache does not match this network or batch: {0}")]
    Cache(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("masking violation: {0}")]
    MaskingViolation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("rollout divergence: {0}")]
    RolloutDivergence(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("degenerate bootstrap: all {0} resamples were degenerate")]
    DegenerateBootstrap(usize),

    #[error("overflow while propagating moments: {0}")]
    Overflow(String),

    #[error("planning failure: {0}")]
    PlanningFailure(String),

    #[error("data format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code for this error: 2 configuration, 3 data format,
    /// 4 numeric divergence, 5 planning failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Format { .. } | Error::InputShape(_) | Error::EmptyInput(_) => 3,
            Error::Divergence(_)
            | Error::RolloutDivergence(_)
            | Error::NumericInput(_)
            | Error::Overflow(_) => 4,
            Error::PlanningFailure(_) => 5,
            _ => 1,
        }
    }
}
