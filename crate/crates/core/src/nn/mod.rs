//! Small convolutional network engine: forward, backprop and SGD.

mod arch;
mod layers;
mod model;
mod params;
mod train;

use thiserror::Error;

pub use arch::{default_arch, ActShape, Layer, ModelArch, ParamSpec, KERNEL, POOL};
pub use model::{
    activations, argmax, argmax_rows, forward, forward_from, loss_and_grad, mean_loss, predict,
    softmax,
};
pub use params::{init_params, ParamEntry, ParamSet};
pub use train::{gather_batch, sgd_step, train_local, TrainOptions, TrainReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("parameter structure does not match")]
    StructureMismatch,
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("label {0} is outside 0..=9")]
    LabelOutOfRange(u8),
    #[error("empty batch")]
    EmptyBatch,
    #[error("client shard is empty")]
    EmptyShard,
    #[error("learning rate must be finite and non-negative, got {0}")]
    InvalidLearningRate(f64),
    #[error("invalid training options: {0}")]
    InvalidOptions(String),
    #[error("training diverged to a non-finite value")]
    NonFinite,
    #[error("parameter container: {0}")]
    Format(String),
}
