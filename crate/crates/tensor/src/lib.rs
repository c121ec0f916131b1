//! Dense f64 tensors, a recording compute graph with reverse-mode
//! differentiation, and a central-difference gradient checker.
//!
//! Tensors are row-major and at most 4-D. Image-like tensors use the
//! `[N, C, H, W]` layout; a rank-3 `[C, H, W]` tensor is treated as `N = 1`.
//! Every primitive rejects non-finite results instead of propagating them.

mod error;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use graph::{compensated_sum, Gradients, Graph, Var};
pub use kernels::{conv2d, dynamic_conv, gap, group_norm};
pub use tensor::Tensor;
