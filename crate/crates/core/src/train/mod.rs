//! Experiment configuration, the training loop, metrics and analysis
//! helpers.

pub mod analysis;
mod config;
pub mod metrics;
mod trainer;

pub use config::{ExperimentConfig, Mode, PRESETS};
pub use trainer::{
    evaluate, evaluate_inputs, logit_bucket_stats, metric_name, run_experiment, train_run, EpochRecord, Evaluation,
    Experiment, ExperimentReport, Prepared, RunResult, RunSummary,
};
