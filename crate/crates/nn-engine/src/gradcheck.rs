use fm_core::Scalar;

use crate::error::Result;
use crate::network::Network;
use crate::tensor::Tensor4;

/// Outcome of a finite-difference sweep over a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Name of the tensor holding the worst coordinate.
    pub worst_param: String,
    /// Flat offset of the worst coordinate inside that tensor.
    pub worst_offset: usize,
    /// How many coordinates were probed.
    pub checked: usize,
    pub passed: bool,
}

/// Coordinates probed exhaustively when the model has at most this many.
const EXHAUSTIVE_LIMIT: usize = 10_000;

/// Compares the network's analytic gradients (under its configured gradient
/// mode) against central finite differences of the batch loss.
///
/// Every coordinate is probed when the model has at most 10^4 parameters;
/// larger models are sampled at evenly spaced coordinates, so the probe set
/// is deterministic. The step is `epsilon * max(1, |w|)` per coordinate and
/// the error measure is `|analytic - fd| / max(1, |analytic|, |fd|)`.
///
/// With the averaged gradient mode the analytic map gradients are scaled by
/// the coverage counts relative to the true derivative, so this check is
/// expected to fail there; run it in sum mode to verify exactness.
pub fn grad_check<S: Scalar>(
    net: &mut Network<S>,
    input: &Tensor4<S>,
    labels: &[usize],
    epsilon: f64,
    threshold: f64,
) -> Result<GradCheckReport> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let (_, analytic) = net.loss_and_grads(input, labels)?;
    let infos = net.param_infos();
    let total: usize = infos.iter().map(|p| p.len()).sum();
    let probes: Vec<usize> = if total <= EXHAUSTIVE_LIMIT {
        (0..total).collect()
    } else {
        // Evenly spaced sample over the flat coordinate space.
        (0..EXHAUSTIVE_LIMIT)
            .map(|i| (i as u128 * total as u128 / EXHAUSTIVE_LIMIT as u128) as usize)
            .collect()
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_offset: 0,
        checked: probes.len(),
        passed: true,
    };

    for &flat in &probes {
        // Locate (tensor, offset) for the flat coordinate.
        let mut tensor_idx = 0;
        let mut offset = flat;
        while offset >= infos[tensor_idx].len() {
            offset -= infos[tensor_idx].len();
            tensor_idx += 1;
        }

        let original = net.param(tensor_idx)[offset];
        let w = original.to_f64();
        let step = epsilon * w.abs().max(1.0);

        let plus = S::from_f64(w + step);
        let minus = S::from_f64(w - step);
        net.param_mut(tensor_idx)[offset] = plus;
        let loss_plus = net.loss_only(input, labels)?.to_f64();
        net.param_mut(tensor_idx)[offset] = minus;
        let loss_minus = net.loss_only(input, labels)?.to_f64();
        net.param_mut(tensor_idx)[offset] = original;

        // Use the actually applied step to cancel representation rounding.
        let span = plus.to_f64() - minus.to_f64();
        let fd = (loss_plus - loss_minus) / span;
        let a = analytic[tensor_idx][offset].to_f64();
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_param = infos[tensor_idx].name.clone();
            report.worst_offset = offset;
        }
    }
    report.passed = report.max_rel_err <= threshold;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Dense;
    use crate::network::Layer;
    use fm_core::GradMode;

    #[test]
    fn linear_model_is_exact_to_rounding() {
        let mut dense = Dense::zeroed(4, 3);
        for (i, v) in dense.weight.iter_mut().enumerate() {
            *v = (i as f64 * 0.7).sin() * 0.6;
        }
        for (i, v) in dense.bias.iter_mut().enumerate() {
            *v = i as f64 * 0.05;
        }
        let mut net = Network::new(
            (4, 1, 1),
            vec![Layer::Dense {
                name: "fc".into(),
                dense,
            }],
            GradMode::Average,
        )
        .unwrap();
        let input = Tensor4::from_vec(
            [3, 4, 1, 1],
            (0..12).map(|v| (v as f64 * 0.43).cos()).collect(),
        )
        .unwrap();
        let report = grad_check(&mut net, &input, &[0, 2, 1], 1e-5, 1e-8).unwrap();
        assert_eq!(report.checked, 15);
        assert!(
            report.passed,
            "max_rel_err {} at {}[{}]",
            report.max_rel_err, report.worst_param, report.worst_offset
        );
    }
}
