//! Training, evaluation, hyper-parameter search and checkpoints.
//!
//! Accuracy is reported as `1 − NMSE`: the mean squared one-step error
//! over all standardized features, divided by the variance of the targets.

mod checkpoint;
mod evaluate;
mod hyper;
mod train;
mod tune;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use evaluate::{evaluate, mape, metrics, validation_mse, AccuracyMetric, Metrics};
pub use hyper::{Axis, HyperParams, Layers, SearchSpace};
pub use train::{fit, train, EpochRecord, TrainConfig, TrainReport};
pub use tune::{tpe_minimize, tune, TpeConfig, TpeSampler, Trial, TuneOutcome};
