use fm_core::Scalar;
use rand::Rng;

use crate::error::{EngineError, Result};
use crate::tensor::Tensor4;

pub fn relu_forward<S: Scalar>(input: &Tensor4<S>) -> Tensor4<S> {
    let data = input
        .data()
        .iter()
        .map(|&v| if v > S::ZERO { v } else { S::ZERO })
        .collect();
    Tensor4::from_vec(input.dims(), data).expect("same dims")
}

/// Gradient mask from the forward *input*; the subgradient at exactly zero is
/// taken as zero.
pub fn relu_backward<S: Scalar>(input: &Tensor4<S>, out_grad: &Tensor4<S>) -> Result<Tensor4<S>> {
    if input.dims() != out_grad.dims() {
        return Err(EngineError::shape(
            "relu gradient",
            format!("{:?}", input.dims()),
            format!("{:?}", out_grad.dims()),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(out_grad.data())
        .map(|(&v, &g)| if v > S::ZERO { g } else { S::ZERO })
        .collect();
    Tensor4::from_vec(input.dims(), data)
}

/// 2x2 max pooling with stride 2. Odd trailing rows/columns are dropped.
pub fn maxpool2_forward<S: Scalar>(input: &Tensor4<S>) -> Result<Tensor4<S>> {
    let (out_h, out_w) = (input.height() / 2, input.width() / 2);
    if out_h == 0 || out_w == 0 {
        return Err(EngineError::shape(
            "maxpool2 input",
            "height and width >= 2",
            format!("{}x{}", input.height(), input.width()),
        ));
    }
    let mut out = Tensor4::zeros([input.batch(), input.channels(), out_h, out_w]);
    for n in 0..input.batch() {
        for c in 0..input.channels() {
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let mut best = input.get(n, c, oh * 2, ow * 2);
                    for (dh, dw) in [(0, 1), (1, 0), (1, 1)] {
                        let v = input.get(n, c, oh * 2 + dh, ow * 2 + dw);
                        if v > best {
                            best = v;
                        }
                    }
                    out.set(n, c, oh, ow, best);
                }
            }
        }
    }
    Ok(out)
}

/// Routes each output gradient to the first maximum in scan order (ties are
/// broken toward the top-left cell), recomputed from the forward input.
pub fn maxpool2_backward<S: Scalar>(
    input: &Tensor4<S>,
    out_grad: &Tensor4<S>,
) -> Result<Tensor4<S>> {
    let (out_h, out_w) = (input.height() / 2, input.width() / 2);
    let expected = [input.batch(), input.channels(), out_h, out_w];
    if out_grad.dims() != expected {
        return Err(EngineError::shape(
            "maxpool2 gradient",
            format!("{expected:?}"),
            format!("{:?}", out_grad.dims()),
        ));
    }
    let mut input_grad = Tensor4::zeros(input.dims());
    for n in 0..input.batch() {
        for c in 0..input.channels() {
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let mut best = input.get(n, c, oh * 2, ow * 2);
                    let mut arg = (oh * 2, ow * 2);
                    for (dh, dw) in [(0, 1), (1, 0), (1, 1)] {
                        let v = input.get(n, c, oh * 2 + dh, ow * 2 + dw);
                        if v > best {
                            best = v;
                            arg = (oh * 2 + dh, ow * 2 + dw);
                        }
                    }
                    let off = input_grad.offset(n, c, arg.0, arg.1);
                    input_grad.data_mut()[off] += out_grad.get(n, c, oh, ow);
                }
            }
        }
    }
    Ok(input_grad)
}

/// Global average pooling: `(n, c, h, w) -> (n, c, 1, 1)`.
pub fn global_avgpool_forward<S: Scalar>(input: &Tensor4<S>) -> Tensor4<S> {
    let area = S::from_f64((input.height() * input.width()) as f64);
    let mut out = Tensor4::zeros([input.batch(), input.channels(), 1, 1]);
    for n in 0..input.batch() {
        for c in 0..input.channels() {
            let mut acc = S::ZERO;
            for h in 0..input.height() {
                for w in 0..input.width() {
                    acc += input.get(n, c, h, w);
                }
            }
            out.set(n, c, 0, 0, acc / area);
        }
    }
    out
}

pub fn global_avgpool_backward<S: Scalar>(
    input: &Tensor4<S>,
    out_grad: &Tensor4<S>,
) -> Result<Tensor4<S>> {
    let expected = [input.batch(), input.channels(), 1, 1];
    if out_grad.dims() != expected {
        return Err(EngineError::shape(
            "global avgpool gradient",
            format!("{expected:?}"),
            format!("{:?}", out_grad.dims()),
        ));
    }
    let area = S::from_f64((input.height() * input.width()) as f64);
    let mut input_grad = Tensor4::zeros(input.dims());
    for n in 0..input.batch() {
        for c in 0..input.channels() {
            let g = out_grad.get(n, c, 0, 0) / area;
            for h in 0..input.height() {
                for w in 0..input.width() {
                    input_grad.set(n, c, h, w, g);
                }
            }
        }
    }
    Ok(input_grad)
}

/// Fully connected layer over the flattened `(c, h, w)` block of each sample.
/// Weights are `(in, out)` row-major; bias is per output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S: Scalar> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Dense<S> {
    pub fn zeroed(in_features: usize, out_features: usize) -> Self {
        Dense {
            in_features,
            out_features,
            weight: vec![S::ZERO; in_features * out_features],
            bias: vec![S::ZERO; out_features],
        }
    }

    /// Weights uniform in `±sqrt(6 / in_features)`, zero bias.
    pub fn init_uniform(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / in_features as f64).sqrt();
        Dense {
            in_features,
            out_features,
            weight: (0..in_features * out_features)
                .map(|_| S::from_f64(rng.random_range(-limit..limit)))
                .collect(),
            bias: vec![S::ZERO; out_features],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads<S: Scalar> {
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

/// Output dims are `(batch, out_features, 1, 1)`.
pub fn dense_forward<S: Scalar>(input: &Tensor4<S>, dense: &Dense<S>) -> Result<Tensor4<S>> {
    let flat = input.channels() * input.height() * input.width();
    if flat != dense.in_features {
        return Err(EngineError::shape(
            "dense input features",
            format!("{}", dense.in_features),
            format!("{flat}"),
        ));
    }
    let mut out = Tensor4::zeros([input.batch(), dense.out_features, 1, 1]);
    for n in 0..input.batch() {
        let row = input.sample(n);
        for o in 0..dense.out_features {
            let mut acc = dense.bias[o];
            for (i, &v) in row.iter().enumerate() {
                acc += v * dense.weight[i * dense.out_features + o];
            }
            out.set(n, o, 0, 0, acc);
        }
    }
    Ok(out)
}

pub fn dense_backward<S: Scalar>(
    input: &Tensor4<S>,
    dense: &Dense<S>,
    out_grad: &Tensor4<S>,
) -> Result<(Tensor4<S>, DenseGrads<S>)> {
    let flat = input.channels() * input.height() * input.width();
    let expected = [input.batch(), dense.out_features, 1, 1];
    if flat != dense.in_features || out_grad.dims() != expected {
        return Err(EngineError::shape(
            "dense gradient",
            format!("input features {} and grad {expected:?}", dense.in_features),
            format!("features {flat} and grad {:?}", out_grad.dims()),
        ));
    }
    let mut input_grad = Tensor4::zeros(input.dims());
    let mut grads = DenseGrads {
        weight: vec![S::ZERO; dense.weight.len()],
        bias: vec![S::ZERO; dense.bias.len()],
    };
    let sample_len = flat;
    for n in 0..input.batch() {
        let row = input.sample(n);
        let in_base = n * sample_len;
        for o in 0..dense.out_features {
            let go = out_grad.get(n, o, 0, 0);
            grads.bias[o] += go;
            for (i, &v) in row.iter().enumerate() {
                grads.weight[i * dense.out_features + o] += go * v;
                input_grad.data_mut()[in_base + i] += go * dense.weight[i * dense.out_features + o];
            }
        }
    }
    Ok((input_grad, grads))
}

/// Mean softmax cross-entropy over the batch, with its exact gradient with
/// respect to the logits.
///
/// Logits are `(batch, classes, 1, 1)`. The per-sample loss is
/// `-log softmax(logits)[label]`; the returned loss is the batch mean and the
/// gradient is `(softmax - onehot) / batch`.
pub fn softmax_xent<S: Scalar>(logits: &Tensor4<S>, labels: &[usize]) -> Result<(S, Tensor4<S>)> {
    let classes = logits.channels();
    if logits.height() != 1 || logits.width() != 1 {
        return Err(EngineError::shape(
            "softmax logits",
            "(batch, classes, 1, 1)",
            format!("{:?}", logits.dims()),
        ));
    }
    if labels.len() != logits.batch() {
        return Err(EngineError::shape(
            "softmax labels",
            format!("{} labels", logits.batch()),
            format!("{} labels", labels.len()),
        ));
    }
    let batch = logits.batch();
    let inv_batch = S::from_f64(1.0 / batch as f64);
    let mut grad = Tensor4::zeros(logits.dims());
    let mut loss = S::ZERO;
    for (n, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(EngineError::LabelOutOfRange {
                label,
                num_classes: classes,
            });
        }
        let mut max = logits.get(n, 0, 0, 0);
        for c in 1..classes {
            let v = logits.get(n, c, 0, 0);
            if v > max {
                max = v;
            }
        }
        let mut denom = S::ZERO;
        for c in 0..classes {
            let shifted = logits.get(n, c, 0, 0) - max;
            denom += S::from_f64(shifted.to_f64().exp());
        }
        let log_denom = S::from_f64(denom.to_f64().ln());
        loss += (log_denom - (logits.get(n, label, 0, 0) - max)) * inv_batch;
        for c in 0..classes {
            let shifted = logits.get(n, c, 0, 0) - max;
            let p = S::from_f64(shifted.to_f64().exp()) / denom;
            let target = if c == label { S::ONE } else { S::ZERO };
            grad.set(n, c, 0, 0, (p - target) * inv_batch);
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let t = Tensor4::from_vec([1, 3, 1, 1], vec![-1.0f64, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&t).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_backward_masks_by_input_sign() {
        let t = Tensor4::from_vec([1, 3, 1, 1], vec![-1.0f64, 0.0, 2.0]).unwrap();
        let g = Tensor4::from_vec([1, 3, 1, 1], vec![5.0f64, 5.0, 5.0]).unwrap();
        assert_eq!(relu_backward(&t, &g).unwrap().data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn maxpool_takes_the_window_max() {
        let t = Tensor4::from_vec([1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let out = maxpool2_forward(&t).unwrap();
        assert_eq!(out.dims(), [1, 1, 1, 1]);
        assert_eq!(out.data()[0], 4.0);
    }

    #[test]
    fn maxpool_backward_routes_to_first_max() {
        // Tie between two cells: the gradient goes to the first in scan order.
        let t = Tensor4::from_vec([1, 1, 2, 2], vec![4.0f64, 1.0, 4.0, 1.0]).unwrap();
        let g = Tensor4::from_vec([1, 1, 1, 1], vec![7.0f64]).unwrap();
        let ig = maxpool2_backward(&t, &g).unwrap();
        assert_eq!(ig.data(), &[7.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_drops_odd_edges() {
        let t = Tensor4::from_vec([1, 1, 3, 3], (0..9).map(|v| v as f64).collect()).unwrap();
        let out = maxpool2_forward(&t).unwrap();
        assert_eq!(out.dims(), [1, 1, 1, 1]);
        assert_eq!(out.data()[0], 4.0); // max of the top-left 2x2 block
    }

    #[test]
    fn global_avgpool_averages() {
        let t = Tensor4::from_vec([1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avgpool_forward(&t).data(), &[2.5]);
    }

    #[test]
    fn dense_is_affine() {
        let mut d = Dense::zeroed(2, 1);
        d.weight = vec![2.0f64, 3.0];
        d.bias = vec![0.5];
        let x = Tensor4::from_vec([1, 2, 1, 1], vec![1.0f64, 1.0]).unwrap();
        let out = dense_forward(&x, &d).unwrap();
        assert_eq!(out.data(), &[5.5]);
    }

    #[test]
    fn softmax_xent_uniform_logits() {
        let logits = Tensor4::zeros([1, 4, 1, 1]);
        let (loss, grad) = softmax_xent::<f64>(&logits, &[2]).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
        assert!((grad.get(0, 2, 0, 0) - (0.25 - 1.0)).abs() < 1e-12);
        assert!((grad.get(0, 0, 0, 0) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn softmax_xent_rejects_bad_label() {
        let logits = Tensor4::zeros([1, 3, 1, 1]);
        assert!(matches!(
            softmax_xent::<f64>(&logits, &[3]),
            Err(EngineError::LabelOutOfRange {
                label: 3,
                num_classes: 3
            })
        ));
    }

    #[test]
    fn softmax_gradient_sums_to_zero_per_sample() {
        let logits =
            Tensor4::from_vec([2, 3, 1, 1], vec![0.3f64, -1.0, 2.0, 0.0, 0.1, -0.4]).unwrap();
        let (_, grad) = softmax_xent(&logits, &[0, 2]).unwrap();
        for n in 0..2 {
            let s: f64 = (0..3).map(|c| grad.get(n, c, 0, 0)).sum();
            assert!(s.abs() < 1e-12);
        }
    }
}
