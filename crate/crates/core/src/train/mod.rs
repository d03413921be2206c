//! Seeded training loop, augmentation, optimizer and paired comparison runs.

mod augment;
mod compare;
mod config;
mod engine;
mod optim;

pub use augment::{augment, AugmentParams};
pub use compare::{aggregate, run_comparison, run_comparison_with, run_metrics, Comparison, ComparisonAggregate, ComparisonRun, MetricStat};
pub use config::{AugmentConfig, OptimizerConfig, TrainConfig};
pub use engine::{batch_gradients, train, EpochRecord, MetricsLog, TrainOutcome};
pub use optim::AdamW;
