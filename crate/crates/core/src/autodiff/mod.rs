//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations are methods on [`Tape`]. Derivative rules are written in terms of
//! the same recorded operations, so `backward(.., create_graph = true)` yields
//! gradients that are themselves differentiable (double backpropagation).

mod backward;
pub mod kernels;
mod ops;
mod tape;
mod tensor;

pub use ops::{sigmoid as sigmoid_value, softmax_rows, ElementwiseKind, GatherOrigin, ReduceKind};
pub use tape::{Tape, DEFAULT_DIV_EPSILON};
pub use tensor::{NodeId, Tensor};
