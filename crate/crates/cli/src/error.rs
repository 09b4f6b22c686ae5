use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("missing {}: run `mitosis {producer}` first", path.display())]
    MissingArtifact { path: PathBuf, producer: &'static str },

    #[error("tile `{tile_id}` has no predicted mask at {}: run `mitosis segment` first", path.display())]
    MissingMask { tile_id: String, path: PathBuf },

    #[error("frame `{frame_id}` has no annotation file at {}", path.display())]
    MissingAnnotation { frame_id: String, path: PathBuf },

    #[error("frame `{0}`: cannot infer the scanner, ids must start with `A` or `H`")]
    UnknownScanner(String),

    #[error("no frame images (.tif, .tiff, .jpg, .jpeg) in {}", .0.display())]
    NoFrames(PathBuf),

    #[error("frames {} and {} share the id `{frame_id}`", first.display(), second.display())]
    DuplicateFrame { frame_id: String, first: PathBuf, second: PathBuf },

    #[error("cannot read image {}: {source}", path.display())]
    ImageRead { path: PathBuf, source: image::ImageError },

    #[error("cannot write image {}: {source}", path.display())]
    ImageWrite { path: PathBuf, source: image::ImageError },

    #[error("work directory is in use (lock file {} exists; delete it if no command is running)", .0.display())]
    Locked(PathBuf),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {reason}", path.display())]
    Artifact { path: PathBuf, reason: String },

    #[error(transparent)]
    Core(#[from] mitosis_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn artifact(path: impl Into<PathBuf>, reason: impl ToString) -> CliError {
        CliError::Artifact {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}
