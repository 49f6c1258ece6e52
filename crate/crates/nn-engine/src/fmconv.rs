use fm_core::{
    aggregate_gradients, FilterMap, FilterMapSpec, FilterShape, GradMode, Scalar, SpecError,
};
use rand::Rng;

use crate::conv::{conv2d_backward, conv2d_forward, FilterSet, FilterView};
use crate::error::{EngineError, Result};
use crate::tensor::Tensor4;

/// Where a convolution layer's weights live: K independent filters, or one
/// shared map the K filters are extracted from.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvMode<S: Scalar> {
    Baseline(FilterSet<S>),
    FilterMapped(FilterMap<S>),
}

/// One convolution layer. `conv_stride` and `padding` act on the input image
/// and are unrelated to the extraction strides stored inside a map spec.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams<S: Scalar> {
    pub mode: ConvMode<S>,
    pub conv_stride: usize,
    pub padding: usize,
}

impl<S: Scalar> ConvLayerParams<S> {
    pub fn baseline(filters: FilterSet<S>, conv_stride: usize, padding: usize) -> Self {
        ConvLayerParams {
            mode: ConvMode::Baseline(filters),
            conv_stride,
            padding,
        }
    }

    pub fn filter_mapped(map: FilterMap<S>, conv_stride: usize, padding: usize) -> Self {
        ConvLayerParams {
            mode: ConvMode::FilterMapped(map),
            conv_stride,
            padding,
        }
    }

    /// Map drawn uniform in `±sqrt(6 / (s1*s2*c))` — fan-in of one *extracted*
    /// filter, not of the map itself.
    pub fn filter_mapped_uniform(
        spec: FilterMapSpec,
        conv_stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> std::result::Result<Self, SpecError> {
        let mut map = FilterMap::zeroed(spec)?;
        let limit = (6.0 / spec.filter_len() as f64).sqrt();
        for v in map.data_mut() {
            *v = S::from_f64(rng.random_range(-limit..limit));
        }
        Ok(ConvLayerParams::filter_mapped(map, conv_stride, padding))
    }

    pub fn filter_count(&self) -> usize {
        match &self.mode {
            ConvMode::Baseline(set) => set.count(),
            ConvMode::FilterMapped(map) => map.spec().filter_count(),
        }
    }

    pub fn filter_shape(&self) -> FilterShape {
        match &self.mode {
            ConvMode::Baseline(set) => set.shape(),
            ConvMode::FilterMapped(map) => map.spec().shape,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.filter_shape().c
    }

    /// Trainable element count: the map length when mapped, `K*s1*s2*c` otherwise.
    pub fn param_count(&self) -> usize {
        match &self.mode {
            ConvMode::Baseline(set) => set.data().len(),
            ConvMode::FilterMapped(map) => map.data().len(),
        }
    }
}

/// Forward pass of a filter-mapped convolution: extract the K filters from
/// the map, then convolve them with the input. Identical, element for
/// element, to running [`conv2d_forward`] on the pre-extracted bank.
pub fn fmconv_forward<S: Scalar>(
    input: &Tensor4<S>,
    params: &ConvLayerParams<S>,
) -> Result<Tensor4<S>> {
    let ConvMode::FilterMapped(map) = &params.mode else {
        return Err(EngineError::shape(
            "fmconv mode",
            "filter-mapped layer",
            "baseline layer",
        ));
    };
    let bank = map.extract_filters();
    conv2d_forward(
        input,
        FilterView::from_bank(&bank),
        params.conv_stride,
        params.padding,
    )
}

/// Backward pass of a filter-mapped convolution: per-filter gradients from
/// the convolution, folded onto the map under `mode`.
pub fn fmconv_backward<S: Scalar>(
    input: &Tensor4<S>,
    params: &ConvLayerParams<S>,
    out_grad: &Tensor4<S>,
    mode: GradMode,
) -> Result<(Tensor4<S>, Vec<S>)> {
    let ConvMode::FilterMapped(map) = &params.mode else {
        return Err(EngineError::shape(
            "fmconv mode",
            "filter-mapped layer",
            "baseline layer",
        ));
    };
    let bank = map.extract_filters();
    let (input_grad, filter_grads) = conv2d_backward(
        input,
        FilterView::from_bank(&bank),
        out_grad,
        params.conv_stride,
        params.padding,
    )?;
    let map_grad = aggregate_gradients(map.spec(), filter_grads.data(), mode)?;
    Ok((input_grad, map_grad))
}

/// Mode-dispatching forward for either kind of convolution layer.
pub fn conv_layer_forward<S: Scalar>(
    input: &Tensor4<S>,
    params: &ConvLayerParams<S>,
) -> Result<Tensor4<S>> {
    match &params.mode {
        ConvMode::Baseline(set) => {
            conv2d_forward(input, set.view(), params.conv_stride, params.padding)
        }
        ConvMode::FilterMapped(_) => fmconv_forward(input, params),
    }
}

/// Mode-dispatching backward; the weight gradient comes back as one flat
/// tensor in the layer's own parameter layout (filter set or map).
pub fn conv_layer_backward<S: Scalar>(
    input: &Tensor4<S>,
    params: &ConvLayerParams<S>,
    out_grad: &Tensor4<S>,
    grad_mode: GradMode,
) -> Result<(Tensor4<S>, Vec<S>)> {
    match &params.mode {
        ConvMode::Baseline(set) => {
            let (input_grad, filter_grads) = conv2d_backward(
                input,
                set.view(),
                out_grad,
                params.conv_stride,
                params.padding,
            )?;
            Ok((input_grad, filter_grads.data().to_vec()))
        }
        ConvMode::FilterMapped(_) => fmconv_backward(input, params, out_grad, grad_mode),
    }
}
