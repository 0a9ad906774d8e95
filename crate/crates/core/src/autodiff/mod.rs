//! Minimal reverse-mode differentiation over dense `f64` tensors.

mod gradcheck;
pub mod nn;
mod tape;
mod tensor;

pub use gradcheck::{evaluate, grad_check, gradients, FD_STEP};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Clamp margin used whenever an angle is recovered from a cosine.
pub const ACOS_EPS: f64 = 1e-6;
