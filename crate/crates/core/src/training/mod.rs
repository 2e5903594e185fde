//! Loss, training loop, rebalancing, ensembling, metrics and attributions.

pub mod attribution;
pub mod deviance;
pub mod metrics;
pub mod report;
pub mod trainer;

pub use attribution::{ensemble_attributions, local_glm_attributions, Attributions};
pub use deviance::{deviance_percent, poisson_deviance, unit_deviance, unit_deviance_log};
pub use metrics::{
    average_frequency, ensemble_predict, evaluate, metrics_from_predictions, rebalance, AggregateRow,
    AverageDefinition, MeanStd, MetricsReport, MetricsRow,
};
pub use trainer::{train, train_on, StopReason, TrainConfig, TrainHistory};
