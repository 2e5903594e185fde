//! Dense tensors, reverse-mode autodiff and neural layers.

mod array;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod ops;
pub mod optim;
mod params;

pub use array::Tensor;
pub use graph::{Gradients, Graph, Var};
pub use layers::{Activation, Dense, Embedding, ForwardCtx, LayerNorm, MultiHeadAttention};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{ParamEntry, ParamId, ParamStore};
