//! Dense arrays, a reverse-mode computation graph, named parameter storage,
//! and checkpoint files.

mod array;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod params;

pub use array::Array;
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointError};
pub use graph::{Gradients, Graph, Var};
pub use params::{Grads, ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: String, node: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: [usize; 2] },
}
