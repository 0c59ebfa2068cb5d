use std::path::{Path, PathBuf};

use volrig_core::fit::FitError;
use volrig_core::kinematics::KinematicsError;
use volrig_core::render::RenderError;
use volrig_core::synth::SynthError;
use volrig_core::volume::{CodecError, VolumeError};

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Config = 2,
    Io = 3,
    Numerical = 4,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, message: impl ToString) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    pub fn config(message: impl ToString) -> Self {
        Error::Config(message.to_string())
    }

    pub fn kind(&self) -> ExitKind {
        match self {
            Error::Io { .. } | Error::Format { .. } => ExitKind::Io,
            Error::Config(_) => ExitKind::Config,
            Error::Numerical(_) => ExitKind::Numerical,
        }
    }
}

macro_rules! config_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Error {
            fn from(e: $t) -> Self {
                Error::Config(e.to_string())
            }
        }
    )*};
}

config_from!(KinematicsError, VolumeError, RenderError, SynthError);

impl From<FitError> for Error {
    fn from(e: FitError) -> Self {
        match e {
            FitError::Diverged { .. } | FitError::NonFiniteLoss => Error::Numerical(e.to_string()),
            _ => Error::Config(e.to_string()),
        }
    }
}

pub(crate) fn codec(path: &Path, e: CodecError) -> Error {
    Error::format(path, e)
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
