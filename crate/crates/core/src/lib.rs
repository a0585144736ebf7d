//! Post-segmentation analysis pipeline for time-lapse plant phenotyping:
//! temporal fusion of label masks, skeleton/graph extraction, architecture
//! metrics, multi-plant tracking, germination modelling, functional PCA,
//! group statistics, and RSML export.

pub mod config;
pub mod error;
pub mod eval;
pub mod fda;
pub mod fusion;
pub mod graph;
pub mod grid;
pub mod hungarian;
pub mod mask;
pub mod pipeline;
pub mod screening;
pub mod skeleton;
pub mod stats;
pub mod synth;
pub mod tracking;

pub mod metrics;
pub mod rsml;
pub use error::{PipelineError, Result};
