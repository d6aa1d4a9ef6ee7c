//! Dense `f64` tensors and a tape-based reverse-mode autodiff graph.

mod graph;
mod value;

pub use graph::{sign, BinaryOp, Gradients, Graph, Reduction, UnaryOp, Var};
pub use value::{argmax_slice, Tensor};
