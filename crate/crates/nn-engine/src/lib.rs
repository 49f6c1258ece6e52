//! Minimal dense-tensor network engine with exact reverse-mode gradients.
//!
//! Direct (loop-based) 2D cross-correlation, pooling, dense, softmax
//! cross-entropy, an identity-shortcut residual block, and a convolution
//! layer whose filters live in a shared [`fm_core::FilterMap`]. Everything is
//! written for oracle-testability first: forward passes have naive-loop
//! definitions, backward passes are exact reverse-mode, and
//! [`grad_check`] compares any network's gradients against central finite
//! differences.
//!
//! Batches are processed sequentially and every reduction runs in a fixed
//! order, so outputs are bitwise reproducible regardless of thread count.

mod conv;
mod error;
mod fmconv;
mod gradcheck;
mod layers;
mod network;
mod residual;
mod tensor;

pub use conv::{conv2d_backward, conv2d_forward, conv_output_hw, FilterSet, FilterView};
pub use error::{EngineError, Result};
pub use fmconv::{
    conv_layer_backward, conv_layer_forward, fmconv_backward, fmconv_forward, ConvLayerParams,
    ConvMode,
};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{
    dense_backward, dense_forward, global_avgpool_backward, global_avgpool_forward,
    maxpool2_backward, maxpool2_forward, relu_backward, relu_forward, softmax_xent, Dense,
    DenseGrads,
};
pub use network::{Layer, Network, ParamInfo};
pub use residual::{residual_backward, residual_forward, ResidualBlock};
pub use tensor::Tensor4;
