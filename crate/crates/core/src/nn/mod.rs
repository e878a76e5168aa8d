//! Small dense/conv networks with hand-written backpropagation.

mod checkpoint;
mod model;
mod optim;
mod schema;
mod tensor;
mod train;

use std::io;

use thiserror::Error;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{GradientSet, Model};
pub use optim::{optimizer_step, OptimizerKind, OptimizerState, TrainConfig};
pub use schema::{LayerKind, LayerSpec, ModelSchema};
pub use tensor::Tensor;
pub use train::{argmax, evaluate, local_train, local_train_with_loss};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("non-finite value")]
    NonFinite,
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty dataset")]
    EmptyData,
    #[error("label {0} outside [0, {1})")]
    Label(usize, usize),
    #[error("no parameter tensor {0}")]
    Index(usize),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
