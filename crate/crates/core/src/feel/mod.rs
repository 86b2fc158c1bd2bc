//! Federated edge learning over the simulated link.

pub mod data;
pub mod model;
pub mod partition;
pub mod train;

pub use crate::link::oac_round;
pub use data::{load_mnist, standardize, synthetic_blobs, BlobSpec, Dataset};
pub use model::{Model, ModelSpec};
pub use partition::{partition, PartitionMode, PartitionSpec};
pub use train::{local_gradients, train, LearningConfig, RoundReport, TrainReport, VmaxPolicy};
