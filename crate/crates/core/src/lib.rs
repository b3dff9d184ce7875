//! Forward-Forward training and inference on the CPU.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`ops`] hold the dense NCHW tensor and the forward/backward
//!   kernels (linear, conv2d, maxpool, batchnorm, ReLU, L2 normalisation).
//! * [`datasets`] reads MNIST/CIFAR-10 and builds label-overlaid samples.
//! * [`goodness`] and [`losses`] implement the layer-local objectives.
//! * [`model`] describes architectures, builds them and (de)serialises checkpoints.
//! * [`trainer`] runs greedy, chunked and overlapping local updates.
//! * [`inference`] implements one-pass, multi-pass and group-channel prediction.

// `!(x > 0.0)` is the NaN-rejecting form used by config validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datasets;
pub mod error;
pub mod goodness;
pub mod gradcheck;
pub mod inference;
pub mod losses;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod trainer;

pub use error::{FfError, Result};
pub use tensor::{Shape, Tensor};
