//! Federated-learning paradigm simulator.
//!
//! Hierarchical (HFL), aggregated (AFL) and continual (CFL) federated training
//! over a small convolutional network trained from scratch on MNIST-style IDX
//! data, with metric tables, curves and plots for comparing the three.

pub mod dataset;
pub mod experiment;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod orchestrators;
pub mod seed;
pub mod tensor;

pub use dataset::{ClientShard, Dataset, DatasetName};
pub use federation::{fedavg, GlobalModel};
pub use metrics::{ConfusionMatrix, MetricsReport};
pub use nn::{default_arch, ModelArch, ParamSet};
pub use orchestrators::{Paradigm, RoundLog, TopologyConfig};
pub use tensor::{Scalar, Tensor};
