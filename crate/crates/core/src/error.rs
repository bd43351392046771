use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the poisoning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dataset write error: {0}")]
    DatasetWrite(String),

    #[error("parse error in record {record}: {message}")]
    Parse { record: String, message: String },

    #[error("spline needs at least two points, got {0}")]
    InsufficientPoints(usize),

    #[error("degenerate spline input: {0}")]
    DegenerateInput(String),

    #[error("rotation is degenerate: {0}")]
    RotationDegenerate(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("entropy is undefined for an all-zero heatmap")]
    UndefinedEntropy,

    #[error("attention fraction is undefined: {0}")]
    UndefinedFraction(String),

    #[error("no trigger candidate satisfies the road constraint")]
    EmptyCandidates,

    #[error("mask does not contain any complete SSIM window")]
    SsimWindow,

    #[error("masked diffusion diverged at step {0}")]
    DiffusionDiverged(usize),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
