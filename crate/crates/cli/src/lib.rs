//! Batch driver for `nlretinex`: configuration, the per-image pipeline,
//! directory metrics and a parameter grid search.

pub mod config;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod pipeline;

pub use crate::config::{parse_override, Params, Precision, RunConfig};
pub use crate::error::CliError;
pub use crate::metrics::{run_metrics, MetricsTable};
pub use crate::pipeline::{decompose, enhance_image, run_pipeline, Enhanced, Layers, Mode, RunSummary};
