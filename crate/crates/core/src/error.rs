use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("manifest line {line}, column `{column}`: {message}")]
    ManifestRow {
        line: usize,
        column: String,
        message: String,
    },

    #[error("duplicate plot_id `{0}` in manifest")]
    DuplicatePlotId(String),

    #[error("rating {0} is outside every bin of the class scheme")]
    RatingOutOfRange(String),

    #[error("invalid class scheme: {0}")]
    InvalidScheme(String),

    #[error("need at least {required} labeled records to split, got {found}")]
    TooFewRecords { required: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid colormap: {0}")]
    InvalidColormap(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors caused by bad configuration or malformed input rather
    /// than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::ManifestRow { .. }
                | Error::DuplicatePlotId(_)
                | Error::RatingOutOfRange(_)
                | Error::InvalidScheme(_)
                | Error::TooFewRecords { .. }
                | Error::InvalidInput(_)
                | Error::InvalidColormap(_)
        )
    }
}
