//! Environment partitioning by sample-weight decorrelation, baseline
//! partitioners, and invariant learners (ERM, IRMv1, V-REx) with the
//! synthetic generators and evaluation protocols used to compare them.

pub mod baselines;
pub mod dataset;
pub mod datagen;
pub mod decorr;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod models;
pub mod numerics;
pub mod partition;
pub mod rng;

pub use decorr::{decorr_partition, optimize_weights, DecorrConfig};
pub use error::{Error, Result};
pub use models::{EnvData, LossKind, ModelKind, ModelParams, TrainConfig};
pub use numerics::{CorrelationMatrix, DataMatrix, WeightVector};
pub use partition::Partition;
