//! A toy restoration network with mixture-of-experts stages.
//!
//! Encoder stages mix every expert with softmax weights. Decoder stages keep
//! only the top `k` experts per sample and never evaluate the rest. Training
//! runs on a small reverse-mode tape ([`autodiff::Tape`]) with plain SGD, and
//! per-type losses can be balanced with the [`crate::reweight`] scheduler.

pub mod autodiff;
mod checkpoint;
mod model;
mod router;
mod tensor;
mod train;

use std::path::PathBuf;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use model::{ForwardStats, ModelConfig, ParamStore, RoutingKind, ToyModel};
pub use router::{
    global_average_pool, hard_combine, hard_route, renormalize, soft_combine, soft_route,
    top_k_indices, RouterOutput, RouterParams,
};
pub use tensor::Tensor;
pub use train::{
    evaluate, train_toy, train_toy_logged, EvalRow, Example, LogRow, TrainConfig, TrainingData,
    TrainingLog, WeightingMode, LOG_HEADER,
};

#[derive(Debug, thiserror::Error)]
pub enum MoeError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("top-k needs 1 <= k <= {experts}, got k = {k}")]
    TopK { k: usize, experts: usize },
    #[error("node does not belong to this tape")]
    UnknownNode,
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite loss {value} for type {type_id} at iteration {iter}")]
    NonFinite {
        iter: usize,
        type_id: usize,
        value: f64,
    },
    #[error("training data: {0}")]
    Data(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Reweight(#[from] crate::reweight::ReweightError),
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
}
