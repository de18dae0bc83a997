//! Pipeline stages behind the `editshock` binary.

pub mod config;
pub mod pipeline;

pub use config::{ConfigError, PipelineConfig};
pub use pipeline::{Outcome, PipelineError, RunOptions};
