use fm_core::{GradMode, Scalar};

use crate::error::{EngineError, Result};
use crate::fmconv::{conv_layer_backward, conv_layer_forward, ConvLayerParams};
use crate::layers::{relu_backward, relu_forward};
use crate::tensor::Tensor4;

/// Identity-shortcut block: `out = input + conv2(relu(conv1(input)))`.
///
/// Both convolutions must preserve the input shape (same channel count,
/// stride 1, padding matched to the kernel), which the forward pass enforces
/// by checking the branch output dims against the input dims.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock<S: Scalar> {
    pub conv1: ConvLayerParams<S>,
    pub conv2: ConvLayerParams<S>,
}

impl<S: Scalar> ResidualBlock<S> {
    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count()
    }
}

pub fn residual_forward<S: Scalar>(
    input: &Tensor4<S>,
    block: &ResidualBlock<S>,
) -> Result<Tensor4<S>> {
    let a1 = conv_layer_forward(input, &block.conv1)?;
    let r1 = relu_forward(&a1);
    let branch = conv_layer_forward(&r1, &block.conv2)?;
    if branch.dims() != input.dims() {
        return Err(EngineError::shape(
            "residual branch output",
            format!("{:?}", input.dims()),
            format!("{:?}", branch.dims()),
        ));
    }
    let mut out = branch;
    for (o, &x) in out.data_mut().iter_mut().zip(input.data()) {
        *o += x;
    }
    Ok(out)
}

/// Gradients flow through both paths: the returned input gradient is the
/// shortcut's `out_grad` plus the branch contribution. Weight gradients come
/// back flat, one per convolution, in each layer's own parameter layout.
pub fn residual_backward<S: Scalar>(
    input: &Tensor4<S>,
    block: &ResidualBlock<S>,
    out_grad: &Tensor4<S>,
    grad_mode: GradMode,
) -> Result<(Tensor4<S>, Vec<S>, Vec<S>)> {
    if out_grad.dims() != input.dims() {
        return Err(EngineError::shape(
            "residual gradient",
            format!("{:?}", input.dims()),
            format!("{:?}", out_grad.dims()),
        ));
    }
    // Recompute the branch activations; cheaper than caching them per step.
    let a1 = conv_layer_forward(input, &block.conv1)?;
    let r1 = relu_forward(&a1);
    let (r1_grad, conv2_grad) = conv_layer_backward(&r1, &block.conv2, out_grad, grad_mode)?;
    let a1_grad = relu_backward(&a1, &r1_grad)?;
    let (branch_input_grad, conv1_grad) =
        conv_layer_backward(input, &block.conv1, &a1_grad, grad_mode)?;
    let mut input_grad = branch_input_grad;
    for (g, &og) in input_grad.data_mut().iter_mut().zip(out_grad.data()) {
        *g += og;
    }
    Ok((input_grad, conv1_grad, conv2_grad))
}
