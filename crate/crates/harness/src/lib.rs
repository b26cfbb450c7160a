//! Experiment orchestration for boostkit: configuration, dataset formats,
//! synthetic data with planted signal, algorithm variants and metrics.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod synth;

pub use config::{ExperimentConfig, Profile, Variant};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, RunOutput};
pub use metrics::{emit_metrics_csv, RoundMetrics};
