//! Small reverse-mode autodiff engine over dense `f64` tensors.

mod graph;
pub mod linalg;
mod tensor;

pub use graph::{Gradients, Graph, NodeId};
pub(crate) use graph::nearest;
pub use tensor::{kernels, Tensor};
