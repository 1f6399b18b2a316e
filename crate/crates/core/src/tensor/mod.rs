//! Dense tensors with tape-based reverse-mode differentiation.

mod gradcheck;
mod kernels;
mod param;
mod scalar;
mod tape;
#[allow(clippy::module_inception)]
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_at, GradCheck};
pub use param::{Bound, Module, Parameter};
pub use scalar::Float;
pub use tape::{sigmoid, Tape, Var};
pub use tensor::Tensor;
