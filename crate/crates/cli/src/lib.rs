//! Experiment driver: config parsing, sweeps with resumable per-run records,
//! and the summary reports built from them.

pub mod config;
pub mod method;
pub mod pipeline;
pub mod records;
pub mod reports;

pub use config::{ExperimentConfig, TaskKind};
pub use method::{Method, MethodKind};
pub use pipeline::{run_experiment, run_experiments, RunOptions, RunSummary};
pub use records::{RunRecord, RunStatus};
