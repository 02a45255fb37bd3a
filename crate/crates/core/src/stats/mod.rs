//! Training, evaluation, and the significance tests used to compare models.

pub mod metrics;
pub mod proportion;
pub mod train;
pub mod ttest;

pub use metrics::{evaluate, CaseMetrics, MetricsTable, Summary};
pub use proportion::{normal_quantile, proportion_ci, CiMethod};
pub use train::{train, validation_loss, EpochLog, LrSchedule, TrainConfig, TrainOutcome};
pub use ttest::{t_test, TTestVariant, TestResult};
