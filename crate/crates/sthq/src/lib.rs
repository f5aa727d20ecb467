//! Soft-to-hard vector quantization for end-to-end learned compression.
//!
//! The pieces, bottom up:
//!
//! - [`tensor`] / [`graph`] / [`optim`]: a minimal reverse-mode autodiff
//!   engine over dense f64 tensors (matmul, broadcasting elementwise ops,
//!   relu, softmax, conv2d, upsampling, slicing) with SGD and Adam.
//! - [`quantizer`]: learnable center sets with soft (softmax over negative
//!   scaled squared distances) and hard (nearest-neighbor) assignment, plus
//!   clustering-based initialization.
//! - [`entropy`]: hard and soft symbol histograms, sample entropy, and the
//!   batch-decomposable soft cross-entropy rate loss.
//! - [`annealing`]: schedules that drive the softmax hardness from soft to
//!   hard (gap-feedback control and exponential growth).
//! - [`coder`]: static-model arithmetic (range) and canonical Huffman
//!   coders with a bit-exact container format.
//! - [`pipelines`]: two end-to-end applications at desk scale: classifier
//!   weight compression and autoencoder image compression.

pub mod annealing;
pub mod coder;
pub mod entropy;
pub mod error;
pub mod exec;
pub mod graph;
pub mod optim;
pub mod pipelines;
pub mod quantizer;
pub mod rng;
pub mod tensor;

pub use error::{Result, SthqError};
