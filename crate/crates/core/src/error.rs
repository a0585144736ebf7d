use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("frame {frame_index}: {message}")]
    Frame { frame_index: usize, message: String },

    #[error("invalid mask: {0}")]
    Mask(String),

    #[error("roi out of bounds: {0}")]
    RoiOutOfBounds(String),

    #[error("dimension mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },

    #[error("empty skeleton")]
    EmptySkeleton,

    #[error("seed ({x}, {y}) farther than {radius_px:.1} px from any skeleton pixel")]
    SeedTooFar { x: i64, y: i64, radius_px: f64 },

    #[error("undefined angle: base and tip coincide")]
    UndefinedAngle,

    #[error("series too short: need {needed} samples, have {have}")]
    SeriesTooShort { needed: usize, have: usize },

    #[error("empty sample in statistical test")]
    EmptySample,

    #[error("rsml error: {0}")]
    Rsml(String),

    #[error("xml parse error at byte {offset}: {message}")]
    XmlParse { offset: u64, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("eval error: {0}")]
    Eval(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("fda error: {0}")]
    Fda(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;
