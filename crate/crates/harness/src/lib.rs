//! Scenario harness for the dual-view estimation stack: configuration,
//! pipeline orchestration, the switching baseline, multi-seed studies,
//! metrics and deterministic file outputs.

pub mod config;
pub mod metrics;
pub mod output;
pub mod pipeline;
pub mod runner;
pub mod study;

pub use config::{load_config, ConfigError, RunConfig, RunConfigFile};
pub use pipeline::{run_fusion_pipeline, run_switching_baseline, PipelineError};
pub use runner::{execute_replay, execute_run, ExitKind, RunnerError};
