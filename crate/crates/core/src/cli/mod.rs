//! Command-line orchestration: configuration, checkpoints, the quantization
//! pipeline and reports.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod pipeline;
pub mod report;

pub use config::PipelineConfig;
pub use pipeline::{Variant, VariantModel};
