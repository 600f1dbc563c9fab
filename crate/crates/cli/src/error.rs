use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mtnet_core::Error),

    #[error(transparent)]
    Nn(#[from] mtnet_nn::NnError),

    /// Every problem found in a config file; the first line carries the count.
    #[error("{} problem(s) in {}", .problems.len(), .path.display())]
    Config { path: PathBuf, problems: Vec<String> },

    #[error("{0}")]
    Usage(String),

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

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Nn(_) => "nn",
            CliError::Config { .. } => "config",
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Image { .. } => "image",
            CliError::Json(_) => "json",
        }
    }

    /// Extra lines shown after the one-line summary.
    pub fn details(&self) -> Vec<String> {
        match self {
            CliError::Config { problems, .. } => problems.iter().map(|p| format!("  - {p}")).collect(),
            _ => Vec::new(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
