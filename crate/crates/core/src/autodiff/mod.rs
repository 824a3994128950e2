//! Reverse-mode automatic differentiation over real and complex tensors.

mod kernels;
mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::{numel, DType, Data, Tensor, C64};
