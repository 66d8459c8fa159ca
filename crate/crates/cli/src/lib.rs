//! Experiment orchestration for the adversarial unlearning library:
//! config parsing, seeded end-to-end runs, multi-seed aggregation, and
//! table generation.

pub mod config;
pub mod experiment;
pub mod report;

pub use config::{parse_config, parse_config_with_overrides, ExperimentConfig, Method};
pub use experiment::{mean_std, run_experiment, AggregateReport, ExperimentOutcome};
