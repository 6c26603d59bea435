//! Define-by-run reverse-mode automatic differentiation over dense `f64`
//! tensors.
//!
//! A [`Graph`] is an append-only list of nodes; each operation pushes a node
//! holding its output value plus whatever it needs for the backward pass.
//! Node ids are handed out as [`Var`]s. [`Graph::backward`] walks the nodes
//! in exact reverse insertion order and consumes the graph; a new graph is
//! built for every forward pass.

mod graph;
pub(crate) mod kernels;
mod tensor;

pub use graph::{DropoutMode, Gradients, Graph, ReduceOp, UnaryOp, Var};
pub use tensor::Tensor;
