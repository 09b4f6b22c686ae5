use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("annotation parse error in frame `{frame_id}` at line {line}: {reason}")]
    AnnotationParse {
        frame_id: String,
        line: usize,
        reason: String,
    },

    #[error("frame `{frame_id}` is {width}x{height} px, smaller than the {grid}x{grid} tiling grid")]
    FrameTooSmall {
        frame_id: String,
        width: u32,
        height: u32,
        grid: u32,
    },

    #[error("unknown frame group `{0}`")]
    UnknownGroup(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("tile `{0}` has no predicted segmentation mask")]
    MissingMask(String),

    #[error("pretrained VGG-16 weights not found at {}", .0.display())]
    MissingPretrained(PathBuf),

    #[error("checkpoint {}: {reason}", path.display())]
    Checkpoint { path: PathBuf, reason: String },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
