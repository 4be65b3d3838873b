//! Masked graph autoencoder, losses with hand-written gradients, checkpoints.

mod checkpoint;
mod loss;
mod model;
pub mod tensor;

use thiserror::Error;

use crate::grid::GridError;
use crate::masker::MaskError;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use loss::{pf_loss, pf_loss_grad, sce_loss, sce_loss_grad, LossBreakdown, SceOutput};
pub use model::{Activation, Gradients, Model, ModelConfig, NormStats, Params, Tensor};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
