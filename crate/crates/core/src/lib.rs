//! Face anti-spoofing with auxiliary depth and rPPG supervision.
//!
//! The crate contains everything needed to train and evaluate a CNN-RNN
//! liveness model from scratch: a tensor/autodiff core, a linear 3D face
//! model with Z-buffer depth rendering, chrominance rPPG extraction, the
//! network with its non-rigid registration layer, a two-stream trainer,
//! a synthetic video generator and PAD evaluation metrics.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the double-precision variants used by the CLI.

pub mod clip;
pub mod error;
pub mod face;
pub mod graph;
pub mod io;
pub mod layers;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod rppg;
pub mod scalar;
pub mod synthgen;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, NodeId};
pub use scalar::{DType, Scalar};

pub type TensorF64 = tensor::Tensor<f64>;
pub type TensorF32 = tensor::Tensor<f32>;
pub type GraphF64 = graph::Graph<f64>;

