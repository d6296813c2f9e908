//! Batch experiments over Hardy-Morrey constants and their reports.

pub mod config;
pub mod presets;
pub mod report;
pub mod run;

pub use config::{validate_config, Case, Experiment, ExperimentConfig, Reference, Relation};
pub use presets::{preset, PresetArgs};
pub use report::emit_report;
pub use run::{run_experiment, Row, SweepReport, Verdict};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("preset: {0}")]
    Preset(String),
    #[error("{0}")]
    Row(String),
    #[error(transparent)]
    Core(#[from] hml_core::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
