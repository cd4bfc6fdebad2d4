//! Iterative pruning laboratory.
//!
//! Trains small convolutional networks from scratch, prunes them iteratively
//! with a family of magnitude-based and random criteria, resets surviving
//! weights in one of several ways, and analyses the resulting connectivity
//! structures (mask overlap, effective sparsity, weight stability,
//! ensembling).
//!
//! Numeric code is generic over [`Scalar`] (`f32` and `f64`); the aliases
//! below fix the `f32` instantiation used for training.

pub mod analytics;
pub mod arch;
pub mod data;
pub mod handling;
pub mod harness;
mod error;
pub mod mask;
pub mod nn;
pub mod pruning;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod zoo;

pub use arch::{ArchitectureSpec, LayerSpec};
pub use error::{Error, Result};
pub use mask::{Mask, MaskSet};
pub use rng::{RngStream, StreamId};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f32>;
pub type Network = nn::Network<f32>;
pub type Gradients = nn::Gradients<f32>;
