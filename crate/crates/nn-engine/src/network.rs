use fm_core::{GradMode, Scalar};

use crate::conv::conv_output_hw;
use crate::error::{EngineError, Result};
use crate::fmconv::{conv_layer_backward, conv_layer_forward, ConvLayerParams, ConvMode};
use crate::layers::{
    dense_backward, dense_forward, global_avgpool_backward, global_avgpool_forward,
    maxpool2_backward, maxpool2_forward, relu_backward, relu_forward, softmax_xent, Dense,
};
use crate::residual::{residual_backward, residual_forward, ResidualBlock};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<S: Scalar> {
    Conv {
        name: String,
        params: ConvLayerParams<S>,
    },
    Relu,
    MaxPool2,
    GlobalAvgPool,
    Dense {
        name: String,
        dense: Dense<S>,
    },
    Residual {
        name: String,
        block: ResidualBlock<S>,
    },
}

/// Name and dims of one trainable tensor, in the network's fixed parameter
/// order (layer order; weight before bias inside a dense layer; conv1 before
/// conv2 inside a residual block).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub dims: Vec<usize>,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A feed-forward stack of layers over `(batch, c, h, w)` tensors.
///
/// The layer sequence and input dims are validated once at construction by
/// propagating shapes; forward and backward then assume a consistent chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<S: Scalar> {
    input_dims: (usize, usize, usize),
    layers: Vec<Layer<S>>,
    grad_mode: GradMode,
}

fn conv_out_dims<S: Scalar>(
    params: &ConvLayerParams<S>,
    c: usize,
    h: usize,
    w: usize,
) -> Result<(usize, usize, usize)> {
    if params.in_channels() != c {
        return Err(EngineError::shape(
            "conv layer input channels",
            format!("{}", params.in_channels()),
            format!("{c}"),
        ));
    }
    let (oh, ow) = conv_output_hw(
        h,
        w,
        params.filter_shape(),
        params.conv_stride,
        params.padding,
    )?;
    Ok((params.filter_count(), oh, ow))
}

impl<S: Scalar> Network<S> {
    pub fn new(
        input_dims: (usize, usize, usize),
        layers: Vec<Layer<S>>,
        grad_mode: GradMode,
    ) -> Result<Self> {
        let net = Network {
            input_dims,
            layers,
            grad_mode,
        };
        net.output_dims()?;
        Ok(net)
    }

    pub fn input_dims(&self) -> (usize, usize, usize) {
        self.input_dims
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn grad_mode(&self) -> GradMode {
        self.grad_mode
    }

    pub fn set_grad_mode(&mut self, mode: GradMode) {
        self.grad_mode = mode;
    }

    /// Propagates `(c, h, w)` through the stack, validating every junction.
    pub fn output_dims(&self) -> Result<(usize, usize, usize)> {
        let (mut c, mut h, mut w) = self.input_dims;
        for layer in &self.layers {
            match layer {
                Layer::Conv { params, .. } => {
                    (c, h, w) = conv_out_dims(params, c, h, w)?;
                }
                Layer::Relu => {}
                Layer::MaxPool2 => {
                    if h < 2 || w < 2 {
                        return Err(EngineError::shape(
                            "maxpool2 input",
                            "height and width >= 2",
                            format!("{h}x{w}"),
                        ));
                    }
                    h /= 2;
                    w /= 2;
                }
                Layer::GlobalAvgPool => {
                    h = 1;
                    w = 1;
                }
                Layer::Dense { dense, .. } => {
                    if dense.in_features != c * h * w {
                        return Err(EngineError::shape(
                            "dense layer input features",
                            format!("{}", dense.in_features),
                            format!("{}", c * h * w),
                        ));
                    }
                    (c, h, w) = (dense.out_features, 1, 1);
                }
                Layer::Residual { block, .. } => {
                    let after1 = conv_out_dims(&block.conv1, c, h, w)?;
                    let after2 = conv_out_dims(&block.conv2, after1.0, after1.1, after1.2)?;
                    if after2 != (c, h, w) {
                        return Err(EngineError::shape(
                            "residual branch output",
                            format!("{:?}", (c, h, w)),
                            format!("{after2:?}"),
                        ));
                    }
                }
            }
        }
        Ok((c, h, w))
    }

    pub fn forward(&self, input: &Tensor4<S>) -> Result<Tensor4<S>> {
        let mut cur = self.check_input(input)?.clone();
        for layer in &self.layers {
            cur = layer_forward(layer, &cur)?;
        }
        Ok(cur)
    }

    /// Forward pass that keeps each layer's input for the backward sweep.
    pub fn forward_cached(&self, input: &Tensor4<S>) -> Result<(Vec<Tensor4<S>>, Tensor4<S>)> {
        let mut cur = self.check_input(input)?.clone();
        let mut cache = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let next = layer_forward(layer, &cur)?;
            cache.push(cur);
            cur = next;
        }
        Ok((cache, cur))
    }

    /// Reverse sweep. Returns the gradient with respect to the network input
    /// and one flat gradient per trainable tensor, aligned with
    /// [`Network::param_infos`].
    pub fn backward(
        &self,
        cache: &[Tensor4<S>],
        out_grad: &Tensor4<S>,
    ) -> Result<(Tensor4<S>, Vec<Vec<S>>)> {
        debug_assert_eq!(cache.len(), self.layers.len());
        let mut grad = out_grad.clone();
        let mut rev_grads: Vec<Vec<S>> = Vec::new();
        for (layer, input) in self.layers.iter().zip(cache).rev() {
            match layer {
                Layer::Conv { params, .. } => {
                    let (ig, wg) = conv_layer_backward(input, params, &grad, self.grad_mode)?;
                    rev_grads.push(wg);
                    grad = ig;
                }
                Layer::Relu => {
                    grad = relu_backward(input, &grad)?;
                }
                Layer::MaxPool2 => {
                    grad = maxpool2_backward(input, &grad)?;
                }
                Layer::GlobalAvgPool => {
                    grad = global_avgpool_backward(input, &grad)?;
                }
                Layer::Dense { dense, .. } => {
                    let (ig, dg) = dense_backward(input, dense, &grad)?;
                    rev_grads.push(dg.bias);
                    rev_grads.push(dg.weight);
                    grad = ig;
                }
                Layer::Residual { block, .. } => {
                    let (ig, g1, g2) = residual_backward(input, block, &grad, self.grad_mode)?;
                    rev_grads.push(g2);
                    rev_grads.push(g1);
                    grad = ig;
                }
            }
        }
        rev_grads.reverse();
        Ok((grad, rev_grads))
    }

    /// Mean cross-entropy loss on a batch plus the parameter gradients.
    pub fn loss_and_grads(&self, input: &Tensor4<S>, labels: &[usize]) -> Result<(S, Vec<Vec<S>>)> {
        let (cache, logits) = self.forward_cached(input)?;
        let (loss, logit_grad) = softmax_xent(&logits, labels)?;
        let (_, grads) = self.backward(&cache, &logit_grad)?;
        Ok((loss, grads))
    }

    pub fn loss_only(&self, input: &Tensor4<S>, labels: &[usize]) -> Result<S> {
        let logits = self.forward(input)?;
        let (loss, _) = softmax_xent(&logits, labels)?;
        Ok(loss)
    }

    pub fn param_infos(&self) -> Vec<ParamInfo> {
        let mut infos = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv { name, params } => infos.push(conv_param_info(name, params)),
                Layer::Dense { name, dense } => {
                    infos.push(ParamInfo {
                        name: format!("{name}.weight"),
                        dims: vec![dense.in_features, dense.out_features],
                    });
                    infos.push(ParamInfo {
                        name: format!("{name}.bias"),
                        dims: vec![dense.out_features],
                    });
                }
                Layer::Residual { name, block } => {
                    infos.push(conv_param_info(&format!("{name}.conv1"), &block.conv1));
                    infos.push(conv_param_info(&format!("{name}.conv2"), &block.conv2));
                }
                _ => {}
            }
        }
        infos
    }

    /// Total trainable element count.
    pub fn param_count(&self) -> usize {
        self.param_infos().iter().map(|p| p.len()).sum()
    }

    pub fn num_param_tensors(&self) -> usize {
        self.param_infos().len()
    }

    pub fn param(&self, index: usize) -> &[S] {
        let mut i = 0;
        for layer in &self.layers {
            for slice in layer_param_slices(layer) {
                if i == index {
                    return slice;
                }
                i += 1;
            }
        }
        panic!("parameter tensor index {index} out of range ({i} tensors)");
    }

    pub fn param_mut(&mut self, index: usize) -> &mut [S] {
        let mut i = 0;
        for layer in &mut self.layers {
            let n = match layer {
                Layer::Conv { .. } => 1,
                Layer::Dense { .. } => 2,
                Layer::Residual { .. } => 2,
                _ => 0,
            };
            if index < i + n {
                return layer_param_slices_mut(layer)
                    .into_iter()
                    .nth(index - i)
                    .expect("slot exists");
            }
            i += n;
        }
        panic!("parameter tensor index {index} out of range ({i} tensors)");
    }

    pub fn all_params_finite(&self) -> bool {
        (0..self.num_param_tensors()).all(|i| self.param(i).iter().all(|v| v.is_finite()))
    }

    fn check_input<'a>(&self, input: &'a Tensor4<S>) -> Result<&'a Tensor4<S>> {
        let (c, h, w) = self.input_dims;
        if (input.channels(), input.height(), input.width()) != (c, h, w) {
            return Err(EngineError::shape(
                "network input",
                format!("(_, {c}, {h}, {w})"),
                format!("{:?}", input.dims()),
            ));
        }
        Ok(input)
    }
}

fn conv_param_info<S: Scalar>(name: &str, params: &ConvLayerParams<S>) -> ParamInfo {
    match &params.mode {
        ConvMode::Baseline(set) => ParamInfo {
            name: format!("{name}.weight"),
            dims: vec![set.count(), set.shape().s1, set.shape().s2, set.shape().c],
        },
        ConvMode::FilterMapped(map) => {
            let (m1, m2, mc) = map.spec().map_dims();
            ParamInfo {
                name: format!("{name}.map"),
                dims: vec![m1, m2, mc],
            }
        }
    }
}

fn conv_param_slice<S: Scalar>(params: &ConvLayerParams<S>) -> &[S] {
    match &params.mode {
        ConvMode::Baseline(set) => set.data(),
        ConvMode::FilterMapped(map) => map.data(),
    }
}

fn conv_param_slice_mut<S: Scalar>(params: &mut ConvLayerParams<S>) -> &mut [S] {
    match &mut params.mode {
        ConvMode::Baseline(set) => set.data_mut(),
        ConvMode::FilterMapped(map) => map.data_mut(),
    }
}

fn layer_param_slices<S: Scalar>(layer: &Layer<S>) -> Vec<&[S]> {
    match layer {
        Layer::Conv { params, .. } => vec![conv_param_slice(params)],
        Layer::Dense { dense, .. } => vec![&dense.weight, &dense.bias],
        Layer::Residual { block, .. } => vec![
            conv_param_slice(&block.conv1),
            conv_param_slice(&block.conv2),
        ],
        _ => Vec::new(),
    }
}

fn layer_param_slices_mut<S: Scalar>(layer: &mut Layer<S>) -> Vec<&mut [S]> {
    match layer {
        Layer::Conv { params, .. } => vec![conv_param_slice_mut(params)],
        Layer::Dense { dense, .. } => vec![&mut dense.weight, &mut dense.bias],
        Layer::Residual { block, .. } => {
            let ResidualBlock { conv1, conv2 } = block;
            vec![conv_param_slice_mut(conv1), conv_param_slice_mut(conv2)]
        }
        _ => Vec::new(),
    }
}

fn layer_forward<S: Scalar>(layer: &Layer<S>, input: &Tensor4<S>) -> Result<Tensor4<S>> {
    match layer {
        Layer::Conv { params, .. } => conv_layer_forward(input, params),
        Layer::Relu => Ok(relu_forward(input)),
        Layer::MaxPool2 => maxpool2_forward(input),
        Layer::GlobalAvgPool => Ok(global_avgpool_forward(input)),
        Layer::Dense { dense, .. } => dense_forward(input, dense),
        Layer::Residual { block, .. } => residual_forward(input, block),
    }
}
