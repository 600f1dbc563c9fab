use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid annotation: {0}")]
    Annotation(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("mode error: {0}")]
    Mode(String),

    #[error("backbone config mismatch: {0}")]
    BackboneMismatch(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Nn(#[from] mtnet_nn::NnError),

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
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category, used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Dimension(_) => "dimension",
            Error::Shape(_) => "shape",
            Error::Annotation(_) => "annotation",
            Error::Invalid(_) => "invalid",
            Error::Mode(_) => "mode",
            Error::BackboneMismatch(_) => "backbone_mismatch",
            Error::Dataset(_) => "dataset",
            Error::Diverged(_) => "diverged",
            Error::Nn(_) => "nn",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
