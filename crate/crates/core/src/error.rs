use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error{}: {message}", layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    Config { layer: Option<usize>, message: String },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("format error in {} at offset {offset}: {message}", file.display())]
    Format {
        file: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("persistence error: {0}")]
    Persistence(String),

    #[error("state error: {0}")]
    State(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("selection error: {0}")]
    Selection(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(layer: impl Into<Option<usize>>, message: impl Into<String>) -> Self {
        Error::Config {
            layer: layer.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
