//! Dense row-major `f64` tensors, a reverse-mode differentiation tape and
//! the Adam optimizer.
//!
//! Everything runs in double precision. A [`Tape`] records the forward
//! computation over [`Var`] handles; [`Tape::backward`] replays it in
//! reverse and accumulates gradients on the leaves. Parameters live outside
//! the tape as [`Tensor`]s and are copied in as leaves for every step.

mod adam;
mod error;
pub mod gradcheck;
mod kernels;
pub mod rng;
mod tape;
mod tensor;

pub use adam::Adam;
pub use error::{Result, TensorError};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Epsilon added to the variance inside the square root of layer norm.
pub const LAYER_NORM_EPS: f64 = 1e-5;
