//! Experiment configuration, orchestration and output.

pub mod config;
pub mod experiment;
pub mod output;
pub mod plot;

pub use config::{CaseConfig, ExperimentConfig, ScheduleConfig};
pub use experiment::{run_config, run_experiment1, run_experiment2, verify_bounds, ExperimentOutput};
pub use output::RunRecord;
pub use plot::emit_plot;
