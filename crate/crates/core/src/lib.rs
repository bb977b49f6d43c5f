//! Multi-view Android application analysis.
//!
//! An APK is characterized through three complementary views: an abstract
//! API callgraph capturing what sensitive behavior the code can reach, an
//! opcode-gram matrix capturing how instructions compose locally, and a
//! denoised byte image capturing what the packaged artifacts look like.
//! Each view is encoded to a fixed-size embedding, the embeddings are fused
//! pairwise and attended over, and a small classifier scores the result as
//! malicious or benign.
//!
//! The numeric stack is self-contained: a reverse-mode autodiff tensor
//! engine generic over `f32`/`f64`, plus the layers, optimizer and training
//! loop built on it.

pub mod manifest;
pub mod model;
pub mod nn;
pub mod apk;
pub mod axml;
pub mod callgraph;
pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod dex;
pub mod encoders;
pub mod eval;
pub mod fusion;
pub mod gram;
pub mod image;
pub mod elf;
pub mod pipeline;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod train;

pub use scalar::{Dtype, Scalar};
pub use tensor::{Parameter, Tensor, TensorError};

/// Production graphs run in single precision.
pub type Tensor32 = tensor::Tensor<f32>;
/// Double precision, used where numerical headroom matters.
pub type Tensor64 = tensor::Tensor<f64>;
