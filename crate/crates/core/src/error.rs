use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no motion detected: no pixel above threshold")]
    NoMotion,

    #[error("config error in key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("video too short: length {len} needs at least gap+1 = {min} frames")]
    VideoTooShort { len: usize, min: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("heatmap is not normalized (sum = {0})")]
    Unnormalized(f64),

    #[error("missing frame {frame} for keypoint {kp} in track")]
    MissingFrame { frame: usize, kp: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unsupported input {path}: {reason}")]
    UnsupportedInput { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
