//! Minimal dense tensor arithmetic with reverse-mode automatic
//! differentiation, sized for training a small MLP denoiser.
//!
//! Tensors are immutable `f64` values; differentiable computations are built
//! on a [`Tape`] and differentiated with [`Tape::backward`]. The
//! [`finite_difference_check`] oracle verifies any tape-built scalar function
//! against central differences.

mod fdcheck;
mod params;
mod tape;
mod tensor;

pub use fdcheck::{finite_difference_check, FdReport};
pub use params::ParamSet;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{
    add, concat, div, exp, matmul, matvec, mul, scale, silu, slice, sub, sum, tensor_binary,
    BinaryOpKind, Tensor, TensorError,
};
