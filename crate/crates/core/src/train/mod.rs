//! Desk-scale supervised training: datasets, optimizers, schedules,
//! checkpoints and the training loop.

mod checkpoint;
mod config;
pub mod data;
mod optim;
mod schedule;
mod trainer;

pub use checkpoint::{Checkpoint, ParamRecord, RngState, MAGIC, VERSION};
pub use config::{DataConfig, DatasetKind, Precision, RunConfig, TrainConfig};
pub use data::{load_cifar10, load_mnist, Dataset, Normalization, Splits};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use schedule::{Schedule, ScheduleKind};
pub use trainer::{
    evaluate, metrics_csv, metrics_row, optimizer_config, train, write_metrics_csv, EpochMetrics, EvalResult,
    TrainReport, TrainState, METRICS_HEADER,
};
