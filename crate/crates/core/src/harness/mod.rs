//! Experiment orchestration: run configs, training, evaluation, timing,
//! checkpoints, the metrics log and the command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod eval;
pub mod metrics;
pub mod optim;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{AlignmentSettings, DataPaths, ModelKind, Profile, RunConfig};
pub use eval::{evaluate_params, evaluate_run, time_run, EvalReport, TimingRow};
pub use metrics::{read_metrics, select_epoch, select_model, MetricsLog, MetricsRow};
pub use optim::Adam;
pub use train::{train_datasets, train_run, TrainOutcome};
