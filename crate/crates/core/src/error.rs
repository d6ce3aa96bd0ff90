use std::path::PathBuf;

use crate::data::TaskId;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[cfg(feature = "nn")]
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error("unknown label {label:?} for task {task}")]
    UnknownLabel { task: TaskId, label: String },
    #[error("class index {index} out of range for task {task} ({num_classes} classes)")]
    ClassIndex {
        task: TaskId,
        index: i64,
        num_classes: usize,
    },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("conflicting labels: {0}")]
    LabelConflict(String),
    #[error("unknown backbone {name:?}; supported: {supported}")]
    UnknownBackbone { name: String, supported: String },
    #[error("invalid input: {0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
