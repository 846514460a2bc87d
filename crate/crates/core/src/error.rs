use crate::backend::BackendError;
use crate::clip::ClipError;
use crate::config::ConfigError;
use crate::dataset::jaad::AdaptError;
use crate::dataset::ManifestError;
use crate::metrics::MetricsError;
use crate::prompt::PromptError;
use crate::protocol::{EvalError, RecordsError};
use crate::report::ReportError;

/// Any harness failure.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
    #[error(transparent)]
    Clip(#[from] ClipError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Records(#[from] RecordsError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<std::path::PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
