//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! The operation set covers what small 1-D/2-D convolutional networks need:
//! convolutions, dense layers, pooling, the usual activations and L1 /
//! cross-entropy reductions. Domain-specific operations can be recorded
//! through [`CustomOp`].

mod adam;
mod backward;
mod conv;
mod error;
pub mod gradcheck;
mod linalg;
mod ops;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use conv::Padding;
pub use error::{Result, TensorError};
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Plain (untracked) `c = a · b` for row-major `[m, k]` and `[k, n]` slices.
pub fn matmul_into(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    linalg::gemm(m, k, n, a, false, b, false, c, 0.0);
}
