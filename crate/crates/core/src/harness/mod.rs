//! Synthetic tasks, experiment orchestration and gradient diagnostics.

mod experiment;
mod probe;
mod task;

pub use experiment::{
    align_to_stride, depth_preset, run_experiment, ExperimentConfig, ExperimentSummary, TrainSettings, METRICS_HEADER, TRAIN_KEYS,
};
pub use probe::{grad_norm_probe, GradNormProfile};
pub use task::{generate_task, SyntheticTaskSpec, TaskData, TaskKind, TASK_KEYS};
