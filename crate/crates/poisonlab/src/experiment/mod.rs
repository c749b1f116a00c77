//! Experiment orchestration: configuration, digest-tracked artifacts,
//! the poison → mix → evaluate → defend pipeline, and deterministic
//! report emission.

pub mod artifacts;
pub mod config;
pub mod pipeline;
pub mod report;

pub use config::ExperimentConfig;
pub use pipeline::{emit_report, run_experiment, Plan};
pub use report::{Report, ReportFiles};
