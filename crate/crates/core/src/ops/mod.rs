//! Forward and backward numerical kernels.
//!
//! Every kernel is a pure function of its inputs. Convolution parallelises over
//! samples with rayon; per-sample work is independent and weight-gradient
//! partials are reduced over fixed sample blocks in block order, so results are
//! bitwise identical for any thread count.

mod activation;
mod batchnorm;
mod conv;
mod gemm;
mod linear;
mod pool;

pub use activation::{l2_normalize_backward, l2_normalize_forward, relu_backward, relu_forward, L2_EPS};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormForward, BatchNormGrads, BatchNormParams, BN_EPS,
    BN_MOMENTUM,
};
pub use conv::{conv2d_backward, conv2d_forward, conv2d_param_grads, conv_output_dim, Padding};
pub use linear::{matmul_backward, matmul_forward, matmul_param_grads};
pub use pool::{maxpool2x2_backward, maxpool2x2_forward, MaxPoolIndices};

use crate::tensor::Tensor;

/// Trainable parameters of one layer.
///
/// Linear weights are stored `Fin x Fout` (`W[i, j]` at `i * Fout + j`); conv
/// weights are `Cout x Cin x K x K`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Vec<f32>,
    pub batchnorm: Option<BatchNormParams>,
}

/// Gradients of a linear or conv kernel.
#[derive(Clone, Debug)]
pub struct KernelGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Vec<f32>,
}
