//! Minimal reverse-mode automatic differentiation over dense 2-D arrays.

mod graph;
mod tape;
mod tensor;

pub use graph::{EdgeList, Segments};
pub use tape::{sigmoid, Tape, Var};
pub use tensor::{Tensor, TensorError, TensorResult};
