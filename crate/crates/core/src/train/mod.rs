//! Optimization, learning-rate schedule, training loop and evaluation.

mod metrics;
mod optim;
mod schedule;
mod trainer;

pub use metrics::{read_metrics, write_metrics_line, EpochMetrics};
pub use optim::{OptimizerState, ADAM_EPS, BETA1, BETA2};
pub use schedule::cosine_warmup_lr;
pub use trainer::{argmax_rows, evaluate_top1, top1, train_epochs, TrainConfig, Trainer};
