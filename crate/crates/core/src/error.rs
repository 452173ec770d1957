use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FmpnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FmpnError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("singular landmark configuration: {0}")]
    SingularConfiguration(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("class \"{class}\" has no paired neutral/expressive samples")]
    Coverage { class: String },

    #[error("class \"{class}\" cannot be mapped onto the mask bank")]
    Mapping { class: String },

    #[error("fold planning failed: {0}")]
    Planning(String),

    #[error("checkpoint load failed: {0}")]
    Load(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("subject leakage between train and test split: {0}")]
    Leakage(String),
}

impl FmpnError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FmpnError::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad user input rather than a failing computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            FmpnError::Parse { .. }
                | FmpnError::Validation { .. }
                | FmpnError::Manifest(_)
                | FmpnError::Config(_)
                | FmpnError::Argument(_)
                | FmpnError::Coverage { .. }
                | FmpnError::Mapping { .. }
                | FmpnError::Planning(_)
                | FmpnError::Json(_)
        )
    }
}
