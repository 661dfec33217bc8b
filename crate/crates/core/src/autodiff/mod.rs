//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{finite_difference_grad, finite_difference_grad_with, relative_error};
pub use graph::{BinaryOp, Graph, Op, ReduceOp, UnaryOp, Var};
pub use tensor::Tensor;
