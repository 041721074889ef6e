use std::path::PathBuf;

use crate::grid::Domain;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain mismatch: expected {expected:?} domain, found {found:?}")]
    DomainMismatch { expected: Domain, found: Domain },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("gaussian fit failed: {0}")]
    FitFailed(String),

    #[error("no measurable scattering: {0}")]
    NoScattering(String),

    #[error("no dominant spatial frequency: {0}")]
    NoDominantFrequency(String),

    #[error("numerical invariant violated: {0}")]
    Invariant(String),

    #[error("realization {index}: {source}")]
    Realization {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("event stream is not time-sorted at record {0}")]
    UnsortedStream(usize),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidGrid(_)
            | Error::InvalidParameter(_)
            | Error::DomainMismatch { .. }
            | Error::GridMismatch(_)
            | Error::Config(_) => 2,
            Error::FitFailed(_)
            | Error::NoScattering(_)
            | Error::NoDominantFrequency(_)
            | Error::Invariant(_) => 3,
            Error::UnsortedStream(_) | Error::Parse { .. } | Error::Io { .. } => 4,
            Error::Realization { source, .. } => source.exit_code(),
        }
    }
}
