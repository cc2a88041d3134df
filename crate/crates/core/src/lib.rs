//! Averaged SGD with online batch-means covariance estimation, confidence
//! regions and the replication harness behind the `sgd-infer` binary.

pub mod batching;
pub mod cli;
pub mod covariance;
pub mod dist;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod models;
pub mod mvn;
pub mod regions;
pub mod scalar;
pub mod sgd;

pub use batching::{ebs_batch_size, BatchMeans, BatchRule, EbsTracker, IbsTracker};
pub use covariance::{ebs_estimate, ibs_estimate, lugsail_estimate, psd_project, CovEstimate, EstimatorKind};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use regions::{all_regions, simultaneous_z, RegionSet};
pub use scalar::Scalar;
pub use sgd::{run_asgd, GradientOracle, IterateObserver, LearningRateSchedule};

pub type EbsTracker64 = EbsTracker<f64>;
pub type EbsTracker32 = EbsTracker<f32>;
pub type BatchMeans64 = BatchMeans<f64>;
pub type BatchMeans32 = BatchMeans<f32>;
pub type CovEstimate64 = CovEstimate<f64>;
pub type CovEstimate32 = CovEstimate<f32>;
pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
