//! Reverse-mode differentiable numeric core.
//!
//! Exactly the operations the models need — matrix product, activations,
//! stable softmax / log-sum-exp, concatenation, reductions, embedding
//! lookup, elementwise arithmetic — with gradients that are verified against
//! central finite differences by [`check_gradients`].

mod array;
mod gradcheck;
mod graph;
mod init;
mod params;
mod real;

pub use array::NumArray;
pub use gradcheck::{check_gradients, GradCheckEntry, GradCheckReport};
pub use graph::{sigmoid_scalar, softplus_scalar, Activation, Graph, NodeId};
pub use init::{xavier_uniform, zeros};
pub use params::{
    load_checkpoint, save_checkpoint, CheckpointManifest, ParamStore,
};
pub use real::{Precision, Real};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ComputeError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("vocabulary error: id {id} out of range for table with {size} rows")]
    Vocabulary { id: usize, size: usize },
    #[error("non-finite value rejected at construction: {0}")]
    NonFinite(String),
    #[error("graph output must be scalar, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
