use crate::map::FilterBank;
use crate::scalar::Scalar;
use crate::spec::{FilterMapSpec, SpecError};

/// How per-filter gradients are folded back onto the shared map.
///
/// `Average` divides the scattered sum at each map cell by that cell's
/// coverage count and is the default update rule. `Sum` leaves the plain
/// scatter-sum, which is the exact chain-rule gradient of the extraction;
/// the averaged form equals it divided elementwise by the counts, so the two
/// differ only by that per-cell scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradMode {
    Sum,
    #[default]
    Average,
}

impl GradMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            GradMode::Sum => "sum",
            GradMode::Average => "average",
        }
    }
}

impl std::str::FromStr for GradMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sum" => Ok(GradMode::Sum),
            "average" => Ok(GradMode::Average),
            other => Err(format!(
                "unknown gradient mode `{other}` (expected `sum` or `average`)"
            )),
        }
    }
}

/// Folds a bank of per-filter gradients into a map-shaped gradient tensor.
///
/// `grads` is bank-layout flat data: ascending filter index, then lexicographic
/// `(i, j, ch)` within each filter — the layout [`FilterBank`] uses. Every
/// element is scattered through the index mapping and accumulated in exactly
/// that order, so the result is bitwise reproducible. In `Average` mode the
/// accumulated sum at each cell is divided by the cell's coverage count.
pub fn aggregate_gradients<S: Scalar>(
    spec: &FilterMapSpec,
    grads: &[S],
    mode: GradMode,
) -> Result<Vec<S>, SpecError> {
    spec.validate()?;
    if grads.len() != spec.bank_len() {
        return Err(SpecError::ShapeMismatch {
            context: "gradient bank",
            expected: spec.bank_len(),
            got: grads.len(),
        });
    }
    let (m1, m2, mc) = spec.map_dims();
    debug_assert_eq!(m1 * m2 * mc, spec.map_len());
    let mut out = vec![S::ZERO; spec.map_len()];
    let mut src = grads.iter();
    for k in 0..spec.filter_count() {
        let (k1_idx, k2_idx, k3_idx) = spec.grid.filter_origin_unchecked(k);
        let a0 = k1_idx * spec.strides.x;
        let b0 = k2_idx * spec.strides.y;
        let d0 = k3_idx * spec.strides.z;
        for i in 0..spec.shape.s1 {
            let a = (a0 + i) % m1;
            for j in 0..spec.shape.s2 {
                let b = (b0 + j) % m2;
                let row = (a * m2 + b) * mc;
                for ch in 0..spec.shape.c {
                    let d = (d0 + ch) % mc;
                    out[row + d] += *src.next().expect("bank length checked above");
                }
            }
        }
    }
    if mode == GradMode::Average {
        let cov = spec.coverage_counts();
        for (v, &count) in out.iter_mut().zip(cov.counts()) {
            *v = *v / S::from_f64(count as f64);
        }
    }
    Ok(out)
}

/// Convenience wrapper for a gradient bank that already lives in a [`FilterBank`].
pub fn aggregate_bank<S: Scalar>(bank: &FilterBank<S>, mode: GradMode) -> Vec<S> {
    aggregate_gradients(bank.spec(), bank.data(), mode)
        .expect("filter bank is shape-consistent by construction")
}
