use fm_core::{FilterBank, FilterShape, Scalar};
use rand::Rng;

use crate::error::{EngineError, Result};
use crate::tensor::Tensor4;

/// Owned set of K convolution filters, each `(s1, s2, c)` with the channel
/// index fastest — the same flat layout as [`FilterBank`].
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSet<S: Scalar> {
    count: usize,
    shape: FilterShape,
    data: Vec<S>,
}

impl<S: Scalar> FilterSet<S> {
    pub fn zeroed(count: usize, shape: FilterShape) -> Self {
        FilterSet {
            count,
            shape,
            data: vec![S::ZERO; count * shape.len()],
        }
    }

    pub fn from_data(count: usize, shape: FilterShape, data: Vec<S>) -> Result<Self> {
        if data.len() != count * shape.len() {
            return Err(EngineError::shape(
                "filter set data",
                format!("{} elements", count * shape.len()),
                format!("{} elements", data.len()),
            ));
        }
        Ok(FilterSet { count, shape, data })
    }

    pub fn from_bank(bank: &FilterBank<S>) -> Self {
        FilterSet {
            count: bank.filter_count(),
            shape: bank.spec().shape,
            data: bank.data().to_vec(),
        }
    }

    /// Independent filters drawn uniform in `±sqrt(6 / (s1*s2*c))`.
    pub fn init_uniform(count: usize, shape: FilterShape, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / shape.len() as f64).sqrt();
        let data = (0..count * shape.len())
            .map(|_| S::from_f64(rng.random_range(-limit..limit)))
            .collect();
        FilterSet { count, shape, data }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn shape(&self) -> FilterShape {
        self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn view(&self) -> FilterView<'_, S> {
        FilterView {
            count: self.count,
            shape: self.shape,
            data: &self.data,
        }
    }
}

/// Borrowed view of K filters; lets baseline sets and freshly extracted banks
/// share one convolution code path without copying.
#[derive(Debug, Clone, Copy)]
pub struct FilterView<'a, S: Scalar> {
    pub count: usize,
    pub shape: FilterShape,
    pub data: &'a [S],
}

impl<'a, S: Scalar> FilterView<'a, S> {
    pub fn new(count: usize, shape: FilterShape, data: &'a [S]) -> Result<Self> {
        if data.len() != count * shape.len() {
            return Err(EngineError::shape(
                "filter view",
                format!("{} elements", count * shape.len()),
                format!("{} elements", data.len()),
            ));
        }
        Ok(FilterView { count, shape, data })
    }

    pub fn from_bank(bank: &'a FilterBank<S>) -> Self {
        FilterView {
            count: bank.filter_count(),
            shape: bank.spec().shape,
            data: bank.data(),
        }
    }

    #[inline]
    fn filter(&self, k: usize) -> &[S] {
        let len = self.shape.len();
        &self.data[k * len..(k + 1) * len]
    }
}

/// Output spatial size of a cross-correlation: `floor((in + 2p - kernel)/stride) + 1`.
pub fn conv_output_hw(
    in_h: usize,
    in_w: usize,
    shape: FilterShape,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(EngineError::shape("conv stride", ">= 1", "0"));
    }
    let padded_h = in_h + 2 * padding;
    let padded_w = in_w + 2 * padding;
    if padded_h < shape.s1 || padded_w < shape.s2 {
        return Err(EngineError::shape(
            "conv output dims",
            format!("input at least {}x{} after padding", shape.s1, shape.s2),
            format!("{padded_h}x{padded_w}"),
        ));
    }
    Ok((
        (padded_h - shape.s1) / stride + 1,
        (padded_w - shape.s2) / stride + 1,
    ))
}

/// Direct 2D cross-correlation (no kernel flip) of `input` with K filters.
///
/// Output dims are `(batch, K, out_h, out_w)`. Bias-free by design; padding
/// is zero-fill on both spatial sides.
pub fn conv2d_forward<S: Scalar>(
    input: &Tensor4<S>,
    filters: FilterView<'_, S>,
    stride: usize,
    padding: usize,
) -> Result<Tensor4<S>> {
    let shape = filters.shape;
    if input.channels() != shape.c {
        return Err(EngineError::shape(
            "conv input channels",
            format!("{}", shape.c),
            format!("{}", input.channels()),
        ));
    }
    let (out_h, out_w) = conv_output_hw(input.height(), input.width(), shape, stride, padding)?;
    let (in_h, in_w) = (input.height(), input.width());
    let mut out = Tensor4::zeros([input.batch(), filters.count, out_h, out_w]);
    for n in 0..input.batch() {
        for k in 0..filters.count {
            let weights = filters.filter(k);
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let mut acc = S::ZERO;
                    for i in 0..shape.s1 {
                        let ih = (oh * stride + i) as isize - padding as isize;
                        if ih < 0 || ih >= in_h as isize {
                            continue;
                        }
                        for j in 0..shape.s2 {
                            let iw = (ow * stride + j) as isize - padding as isize;
                            if iw < 0 || iw >= in_w as isize {
                                continue;
                            }
                            let w_row = (i * shape.s2 + j) * shape.c;
                            for ch in 0..shape.c {
                                acc += input.get(n, ch, ih as usize, iw as usize)
                                    * weights[w_row + ch];
                            }
                        }
                    }
                    out.set(n, k, oh, ow, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Exact reverse-mode gradients of [`conv2d_forward`]: returns the gradient
/// with respect to the input and a filter-set-shaped gradient for the weights.
///
/// Accumulation order is fixed (batch, then filter, then output position), so
/// results are bitwise reproducible.
pub fn conv2d_backward<S: Scalar>(
    input: &Tensor4<S>,
    filters: FilterView<'_, S>,
    out_grad: &Tensor4<S>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor4<S>, FilterSet<S>)> {
    let shape = filters.shape;
    if input.channels() != shape.c {
        return Err(EngineError::shape(
            "conv input channels",
            format!("{}", shape.c),
            format!("{}", input.channels()),
        ));
    }
    let (out_h, out_w) = conv_output_hw(input.height(), input.width(), shape, stride, padding)?;
    let expected = [input.batch(), filters.count, out_h, out_w];
    if out_grad.dims() != expected {
        return Err(EngineError::shape(
            "conv output gradient",
            format!("{expected:?}"),
            format!("{:?}", out_grad.dims()),
        ));
    }
    let (in_h, in_w) = (input.height(), input.width());
    let mut input_grad = Tensor4::zeros(input.dims());
    let mut filter_grads = FilterSet::zeroed(filters.count, shape);
    let filter_len = shape.len();
    for n in 0..input.batch() {
        for k in 0..filters.count {
            let weights = filters.filter(k);
            let grad_base = k * filter_len;
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let go = out_grad.get(n, k, oh, ow);
                    if go == S::ZERO {
                        continue;
                    }
                    for i in 0..shape.s1 {
                        let ih = (oh * stride + i) as isize - padding as isize;
                        if ih < 0 || ih >= in_h as isize {
                            continue;
                        }
                        for j in 0..shape.s2 {
                            let iw = (ow * stride + j) as isize - padding as isize;
                            if iw < 0 || iw >= in_w as isize {
                                continue;
                            }
                            let w_row = (i * shape.s2 + j) * shape.c;
                            for ch in 0..shape.c {
                                let in_off = input.offset(n, ch, ih as usize, iw as usize);
                                filter_grads.data_mut()[grad_base + w_row + ch] +=
                                    go * input.data()[in_off];
                                input_grad.data_mut()[in_off] += go * weights[w_row + ch];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((input_grad, filter_grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(s1: usize, s2: usize, c: usize) -> FilterShape {
        FilterShape::new(s1, s2, c)
    }

    #[test]
    fn scalar_case_is_a_product() {
        let input = Tensor4::from_vec([1, 1, 1, 1], vec![3.0f64]).unwrap();
        let weights = [2.0f64];
        let filters = FilterView::new(1, shape(1, 1, 1), &weights).unwrap();
        let out = conv2d_forward(&input, filters, 1, 0).unwrap();
        assert_eq!(out.dims(), [1, 1, 1, 1]);
        assert_eq!(out.data()[0], 6.0);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let input = Tensor4::from_vec([1, 1, 3, 3], (0..9).map(|v| v as f64).collect()).unwrap();
        let mut weights = vec![0.0f64; 9];
        weights[4] = 1.0; // center of the 3x3 kernel
        let filters = FilterView::new(1, shape(3, 3, 1), &weights).unwrap();
        let out = conv2d_forward(&input, filters, 1, 1).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let input = Tensor4::zeros([1, 2, 3, 3]);
        let weights = vec![0.0f64; 9];
        let filters = FilterView::new(1, shape(3, 3, 1), &weights).unwrap();
        assert!(matches!(
            conv2d_forward(&input, filters, 1, 0),
            Err(EngineError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn kernel_larger_than_padded_input_is_rejected() {
        let input = Tensor4::zeros([1, 1, 2, 2]);
        let weights = vec![0.0f64; 9];
        let filters = FilterView::new(1, shape(3, 3, 1), &weights).unwrap();
        assert!(conv2d_forward(&input, filters, 1, 0).is_err());
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let input = Tensor4::from_vec([1, 1, 3, 3], vec![1.0f64; 9]).unwrap();
        let weights = vec![0.5f64; 9];
        let filters = FilterView::new(1, shape(3, 3, 1), &weights).unwrap();
        let out_grad = Tensor4::zeros([1, 1, 1, 1]);
        let (ig, fg) = conv2d_backward(&input, filters, &out_grad, 1, 0).unwrap();
        assert!(ig.data().iter().all(|&v| v == 0.0));
        assert!(fg.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_backward_is_the_product_rule() {
        let input = Tensor4::from_vec([1, 1, 1, 1], vec![3.0f64]).unwrap();
        let weights = [2.0f64];
        let filters = FilterView::new(1, shape(1, 1, 1), &weights).unwrap();
        let out_grad = Tensor4::from_vec([1, 1, 1, 1], vec![5.0f64]).unwrap();
        let (ig, fg) = conv2d_backward(&input, filters, &out_grad, 1, 0).unwrap();
        assert_eq!(ig.data()[0], 2.0 * 5.0);
        assert_eq!(fg.data()[0], 3.0 * 5.0);
    }
}
