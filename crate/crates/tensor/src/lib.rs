//! Numerical substrate for the trajectory predictor.
//!
//! Everything is 64-bit. A [`Tape`] records differentiable operations as they
//! execute; [`Tape::backward`] replays them in reverse and accumulates
//! gradients into the [`ParamStore`] that owns the trainable tensors.

mod adam;
mod error;
pub mod finite_diff;
pub mod kernels;
mod param;
pub mod rng;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::TensorError;
pub use param::{ParamId, ParamStore, ParamTensor};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
