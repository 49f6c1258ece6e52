//! Finite-difference and naive-loop oracles for the engine's forward and
//! backward passes, in double precision throughout.

use fm_core::{ExtractionStrides, FilterGrid, FilterMap, FilterMapSpec, FilterShape, GradMode};
use nn_engine::{
    conv2d_backward, conv2d_forward, fmconv_backward, grad_check, softmax_xent, ConvLayerParams,
    ConvMode, Dense, FilterSet, FilterView, Layer, Network, ResidualBlock, Tensor4,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    let len = dims.iter().product();
    Tensor4::from_vec(
        dims,
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn random_filters(count: usize, shape: FilterShape, rng: &mut ChaCha8Rng) -> FilterSet<f64> {
    let mut set = FilterSet::zeroed(count, shape);
    for v in set.data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    set
}

/// Seven nested loops, written from the definition with zero reuse of the
/// production indexing helpers.
fn naive_conv(
    input: &Tensor4<f64>,
    filters: &FilterSet<f64>,
    stride: usize,
    padding: usize,
) -> Tensor4<f64> {
    let shape = filters.shape();
    let out_h = (input.height() + 2 * padding - shape.s1) / stride + 1;
    let out_w = (input.width() + 2 * padding - shape.s2) / stride + 1;
    let mut out = Tensor4::zeros([input.batch(), filters.count(), out_h, out_w]);
    for n in 0..input.batch() {
        for k in 0..filters.count() {
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let mut acc = 0.0;
                    for ch in 0..shape.c {
                        for i in 0..shape.s1 {
                            for j in 0..shape.s2 {
                                let ih = (oh * stride + i) as isize - padding as isize;
                                let iw = (ow * stride + j) as isize - padding as isize;
                                if ih < 0
                                    || iw < 0
                                    || ih >= input.height() as isize
                                    || iw >= input.width() as isize
                                {
                                    continue;
                                }
                                let w = filters.data()
                                    [k * shape.len() + (i * shape.s2 + j) * shape.c + ch];
                                acc += input.get(n, ch, ih as usize, iw as usize) * w;
                            }
                        }
                    }
                    out.set(n, k, oh, ow, acc);
                }
            }
        }
    }
    out
}

#[test]
fn conv_forward_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let input = random_tensor([2, 3, 5, 5], &mut rng);
    let filters = random_filters(4, FilterShape::new(3, 3, 3), &mut rng);
    let fast = conv2d_forward(&input, filters.view(), 1, 1).unwrap();
    let slow = naive_conv(&input, &filters, 1, 1);
    assert_eq!(fast.dims(), slow.dims());
    for (a, b) in fast.data().iter().zip(slow.data()) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn conv_forward_matches_naive_loops_strided_unpadded() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let input = random_tensor([1, 2, 7, 6], &mut rng);
    let filters = random_filters(3, FilterShape::new(2, 3, 2), &mut rng);
    let fast = conv2d_forward(&input, filters.view(), 2, 0).unwrap();
    let slow = naive_conv(&input, &filters, 2, 0);
    assert_eq!(fast.dims(), [1, 3, 3, 2]);
    for (a, b) in fast.data().iter().zip(slow.data()) {
        assert!((a - b).abs() <= 1e-12);
    }
}

/// Finite differences of `sum(out * cotangent)` with respect to every input
/// pixel and every filter weight.
#[test]
fn conv_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let input = random_tensor([2, 2, 4, 4], &mut rng);
    let filters = random_filters(3, FilterShape::new(3, 3, 2), &mut rng);
    let cotangent = random_tensor([2, 3, 4, 4], &mut rng);

    let loss = |input: &Tensor4<f64>, filters: &FilterSet<f64>| -> f64 {
        let out = conv2d_forward(input, filters.view(), 1, 1).unwrap();
        out.data()
            .iter()
            .zip(cotangent.data())
            .map(|(o, c)| o * c)
            .sum()
    };

    let (input_grad, filter_grads) =
        conv2d_backward(&input, filters.view(), &cotangent, 1, 1).unwrap();

    let eps = 1e-6;
    let mut probe_input = input.clone();
    for idx in 0..input.len() {
        let orig = probe_input.data()[idx];
        probe_input.data_mut()[idx] = orig + eps;
        let plus = loss(&probe_input, &filters);
        probe_input.data_mut()[idx] = orig - eps;
        let minus = loss(&probe_input, &filters);
        probe_input.data_mut()[idx] = orig;
        let fd = (plus - minus) / (2.0 * eps);
        let a = input_grad.data()[idx];
        assert!(
            (fd - a).abs() / a.abs().max(fd.abs()).max(1.0) <= 1e-6,
            "input grad {idx}: fd {fd} vs analytic {a}"
        );
    }

    let mut probe_filters = filters.clone();
    for idx in 0..filters.data().len() {
        let orig = probe_filters.data()[idx];
        probe_filters.data_mut()[idx] = orig + eps;
        let plus = loss(&input, &probe_filters);
        probe_filters.data_mut()[idx] = orig - eps;
        let minus = loss(&input, &probe_filters);
        probe_filters.data_mut()[idx] = orig;
        let fd = (plus - minus) / (2.0 * eps);
        let a = filter_grads.data()[idx];
        assert!(
            (fd - a).abs() / a.abs().max(fd.abs()).max(1.0) <= 1e-6,
            "filter grad {idx}: fd {fd} vs analytic {a}"
        );
    }
}

#[test]
fn softmax_xent_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let logits = random_tensor([3, 5, 1, 1], &mut rng);
    let labels = [1usize, 4, 0];
    let (_, grad) = softmax_xent(&logits, &labels).unwrap();
    let eps = 1e-6;
    let mut probe = logits.clone();
    for idx in 0..logits.len() {
        let orig = probe.data()[idx];
        probe.data_mut()[idx] = orig + eps;
        let (plus, _) = softmax_xent(&probe, &labels).unwrap();
        probe.data_mut()[idx] = orig - eps;
        let (minus, _) = softmax_xent(&probe, &labels).unwrap();
        probe.data_mut()[idx] = orig;
        let fd = (plus - minus) / (2.0 * eps);
        let a = grad.data()[idx];
        assert!(
            (fd - a).abs() <= 1e-6,
            "logit {idx}: fd {fd} vs analytic {a}"
        );
    }
}

fn small_fm_spec() -> FilterMapSpec {
    // 12 filters of 3x3x4 on a 4x6x4 map (grid 2x3x2, strides 2,2,2).
    FilterMapSpec::new(
        FilterShape::new(3, 3, 4),
        FilterGrid::new(2, 3, 2),
        ExtractionStrides::new(2, 2, 2),
    )
    .unwrap()
}

/// Sum-mode map gradients are the true derivative of the end-to-end scalar
/// loss with respect to each map cell; average mode is the same thing divided
/// by the coverage counts.
#[test]
fn fmconv_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let spec = small_fm_spec();
    let map_data: Vec<f64> = (0..spec.map_len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let map = FilterMap::from_data(spec, map_data).unwrap();
    let params = ConvLayerParams::filter_mapped(map, 1, 1);
    let input = random_tensor([2, 4, 5, 5], &mut rng);
    let cotangent = random_tensor([2, 12, 5, 5], &mut rng);

    let (_, sum_grad) = fmconv_backward(&input, &params, &cotangent, GradMode::Sum).unwrap();
    let (_, avg_grad) = fmconv_backward(&input, &params, &cotangent, GradMode::Average).unwrap();
    let cov = spec.coverage_counts();

    let loss = |params: &ConvLayerParams<f64>| -> f64 {
        let out = nn_engine::fmconv_forward(&input, params).unwrap();
        out.data()
            .iter()
            .zip(cotangent.data())
            .map(|(o, c)| o * c)
            .sum()
    };

    let eps = 1e-6;
    let mut probe = params.clone();
    for idx in 0..spec.map_len() {
        let ConvMode::FilterMapped(map) = &mut probe.mode else {
            unreachable!()
        };
        let orig = map.data()[idx];
        map.data_mut()[idx] = orig + eps;
        let plus = loss(&probe);
        let ConvMode::FilterMapped(map) = &mut probe.mode else {
            unreachable!()
        };
        map.data_mut()[idx] = orig - eps;
        let minus = loss(&probe);
        let ConvMode::FilterMapped(map) = &mut probe.mode else {
            unreachable!()
        };
        map.data_mut()[idx] = orig;

        let fd = (plus - minus) / (2.0 * eps);
        let a = sum_grad[idx];
        assert!(
            (fd - a).abs() / a.abs().max(fd.abs()).max(1.0) <= 1e-6,
            "map cell {idx}: fd {fd} vs sum-mode {a}"
        );
        // Average mode is bitwise the sum divided by the cell's count.
        assert_eq!(avg_grad[idx], sum_grad[idx] / cov.counts()[idx] as f64);
    }
}

/// A baseline layer whose filters were copied out of the map behaves exactly
/// like the mapped layer until the first parameter update: same outputs, same
/// per-filter gradients.
#[test]
fn baseline_twin_matches_until_first_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let spec = small_fm_spec();
    let map_data: Vec<f64> = (0..spec.map_len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let map = FilterMap::from_data(spec, map_data).unwrap();
    let bank = map.extract_filters();
    let twin = FilterSet::from_bank(&bank);

    let fm_params = ConvLayerParams::filter_mapped(map, 1, 1);
    let input = random_tensor([2, 4, 6, 6], &mut rng);

    let fm_out = nn_engine::fmconv_forward(&input, &fm_params).unwrap();
    let twin_out = conv2d_forward(&input, twin.view(), 1, 1).unwrap();
    assert_eq!(fm_out, twin_out);

    let cotangent = random_tensor(fm_out.dims(), &mut rng);
    let (fm_in_grad, _) = fmconv_backward(&input, &fm_params, &cotangent, GradMode::Sum).unwrap();
    let (twin_in_grad, twin_filter_grads) =
        conv2d_backward(&input, twin.view(), &cotangent, 1, 1).unwrap();
    assert_eq!(fm_in_grad, twin_in_grad);

    // The mapped layer's per-filter gradients (before aggregation onto the
    // map) are exactly the twin's filter gradients.
    let bank_view = FilterView::from_bank(&bank);
    let (_, fm_filter_grads) = conv2d_backward(&input, bank_view, &cotangent, 1, 1).unwrap();
    assert_eq!(fm_filter_grads.data(), twin_filter_grads.data());
}

fn toy_fm_network(grad_mode: GradMode, rng: &mut ChaCha8Rng) -> Network<f64> {
    // Two mapped conv layers with grids 2x3x2 (12 filters over 4 input
    // channels) and 4x4x4 (64 filters over 12 channels), then pool and dense.
    let spec1 = FilterMapSpec::new(
        FilterShape::new(3, 3, 4),
        FilterGrid::new(2, 3, 2),
        ExtractionStrides::new(2, 2, 2),
    )
    .unwrap();
    let spec2 = FilterMapSpec::new(
        FilterShape::new(3, 3, 12),
        FilterGrid::new(4, 4, 4),
        ExtractionStrides::new(2, 2, 3),
    )
    .unwrap();
    Network::new(
        (4, 6, 6),
        vec![
            Layer::Conv {
                name: "c1".into(),
                params: ConvLayerParams::filter_mapped_uniform(spec1, 1, 1, rng).unwrap(),
            },
            Layer::Relu,
            Layer::Conv {
                name: "c2".into(),
                params: ConvLayerParams::filter_mapped_uniform(spec2, 1, 1, rng).unwrap(),
            },
            Layer::Relu,
            Layer::MaxPool2,
            Layer::GlobalAvgPool,
            Layer::Dense {
                name: "fc".into(),
                dense: Dense::init_uniform(64, 3, rng),
            },
        ],
        grad_mode,
    )
    .unwrap()
}

#[test]
fn toy_fm_network_grad_check_passes_in_sum_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut net = toy_fm_network(GradMode::Sum, &mut rng);
    let input = random_tensor([2, 4, 6, 6], &mut rng);
    let labels = [0usize, 2];
    let report = grad_check(&mut net, &input, &labels, 1e-5, 1e-5).unwrap();
    assert_eq!(report.checked, net.param_count());
    assert!(
        report.passed,
        "max_rel_err {} at {}[{}]",
        report.max_rel_err, report.worst_param, report.worst_offset
    );
}

#[test]
fn toy_fm_network_grad_check_fails_in_average_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut net = toy_fm_network(GradMode::Average, &mut rng);
    let input = random_tensor([2, 4, 6, 6], &mut rng);
    let labels = [1usize, 2];
    let report = grad_check(&mut net, &input, &labels, 1e-5, 1e-5).unwrap();
    // The averaged rule is a count-scaled gradient, not the true one.
    assert!(!report.passed);
    assert!(report.worst_param.ends_with(".map"));
}

#[test]
fn residual_network_grad_check_passes() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let channels = 4;
    let shape = FilterShape::new(3, 3, channels);
    let block = |rng: &mut ChaCha8Rng| ResidualBlock {
        conv1: ConvLayerParams::baseline(FilterSet::init_uniform(channels, shape, rng), 1, 1),
        conv2: ConvLayerParams::baseline(FilterSet::init_uniform(channels, shape, rng), 1, 1),
    };
    let mut net = Network::new(
        (channels, 5, 5),
        vec![
            Layer::Residual {
                name: "r1".into(),
                block: block(&mut rng),
            },
            Layer::Relu,
            Layer::Residual {
                name: "r2".into(),
                block: block(&mut rng),
            },
            Layer::GlobalAvgPool,
            Layer::Dense {
                name: "fc".into(),
                dense: Dense::init_uniform(channels, 2, &mut rng),
            },
        ],
        GradMode::Sum,
    )
    .unwrap();
    let input = random_tensor([2, channels, 5, 5], &mut rng);
    let report = grad_check(&mut net, &input, &[0, 1], 1e-5, 1e-6).unwrap();
    assert!(
        report.passed,
        "max_rel_err {} at {}[{}]",
        report.max_rel_err, report.worst_param, report.worst_offset
    );
}

/// One small-step descent on a fixed batch must not increase the loss.
#[test]
fn first_sgd_step_does_not_increase_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut net = toy_fm_network(GradMode::Average, &mut rng);
    let input = random_tensor([4, 4, 6, 6], &mut rng);
    let labels = [0usize, 1, 2, 0];
    let (before, grads) = net.loss_and_grads(&input, &labels).unwrap();
    assert!(before.is_finite());
    let lr = 1e-4;
    for (t, grad) in grads.iter().enumerate() {
        let slice = net.param_mut(t);
        for (p, g) in slice.iter_mut().zip(grad) {
            *p -= lr * g;
        }
    }
    let after = net.loss_only(&input, &labels).unwrap();
    assert!(after.is_finite());
    assert!(after <= before, "loss went up: {before} -> {after}");
}
