//! Dense-tensor differentiable numerics.
//!
//! A small reverse-mode engine: tensors carry values and optional gradient
//! accumulators, kernels executed through a [`Tape`] are recorded in order,
//! and [`Tape::backward`] replays the record in reverse to populate
//! gradients. On top of the kernel set sit the recurrent cells, multi-head
//! attention and the Adam optimizer that the graph models are built from.
//!
//! The scalar type defaults to `f64` so gradients can be validated against
//! central finite differences; enabling the `f32` feature switches the whole
//! engine to single precision.

mod adam;
mod error;
pub mod gradcheck;
mod nn;
mod tape;
mod tensor;

pub use adam::Adam;
pub use error::{DiffError, Result};
pub use nn::{glorot_uniform, linear, uniform_init, GruCell, Mlp, MultiHeadAttention, RnnCell};
pub use tape::Tape;
pub use tensor::Tensor;

/// Scalar element type of every tensor.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;
