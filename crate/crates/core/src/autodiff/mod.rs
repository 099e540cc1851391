//! Dense `f64` tensors and a define-by-run reverse-mode tape.

pub mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use tape::{Axis, Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;
