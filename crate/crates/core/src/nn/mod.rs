//! Double-precision reverse-mode autodiff, layers, AdamW, nucleus sampling and checkpoints.

mod checkpoint;
mod graph;
pub mod gradcheck;
pub mod kernels;
mod layers;
mod optim;
mod sample;
mod tensor;

use thiserror::Error;

use crate::binio::FormatError;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use graph::{CeItem, Graph, Mask, Var};
pub use layers::{Embedding, LayerNorm, Linear, Mlp, MultiHeadAttention, ResidualMlp, TransformerBlock};
pub use optim::{cosine_lr, AdamW};
pub use sample::{argmax, sample_top_p};
pub use tensor::{Grads, ParamId, ParamStore, Tensor};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward needs a scalar loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("optimizer step without gradients")]
    NoGradients,
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("sampling failed: {0}")]
    Sampling(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}
