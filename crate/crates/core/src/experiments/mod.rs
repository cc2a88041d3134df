//! Replication harness and the studies built on it.

mod bias;
mod classification;
mod config;
mod metrics;
mod qq;
mod replications;

pub use bias::{equal_batch_bias, equal_batch_bias_naive, fit_c1, mean_model_bias_oracle, BiasOracle};
pub use classification::{
    classification_experiment, fit_logistic, misclassification_table, ClassRow, ClassificationConfig,
    ClassificationResult, FittedModel,
};
pub use config::{ExperimentConfig, DEFAULT_IBS_SCALE};
pub use metrics::{mean_se, proportion, rel_frobenius, write_long_csv, MetricsRow, LONG_CSV_HEADER};
pub use qq::{ks_distance, qq_data, write_qq_csv, QqPoint};
pub use replications::{run_replications, write_run, RepCell, RepResult, RunResult, ORACLE_LABEL};
