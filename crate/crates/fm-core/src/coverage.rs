use crate::spec::FilterMapSpec;

/// Per-dimension cyclic coverage: for a map axis of length `positions * stride`,
/// counts how many (grid position, local offset) pairs land on each index,
/// i.e. `out[a] = |{(p, o) : p < positions, o < extent, (p*stride + o) mod len = a}|`.
pub fn cyclic_coverage(positions: usize, stride: usize, extent: usize) -> Vec<u64> {
    let len = positions * stride;
    let mut out = vec![0u64; len];
    for p in 0..positions {
        let start = p * stride;
        for o in 0..extent {
            out[(start + o) % len] += 1;
        }
    }
    out
}

/// How many (filter, element) pairs map onto each map cell.
///
/// This is the denominator of the averaged gradient-aggregation rule. Spec
/// validation guarantees every count is at least 1, so the division is always
/// defined.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageCount {
    spec: FilterMapSpec,
    counts: Vec<u64>,
}

impl CoverageCount {
    pub fn spec(&self) -> &FilterMapSpec {
        &self.spec
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    #[inline]
    pub fn count(&self, a: usize, b: usize, d: usize) -> u64 {
        let (_, m2, mc) = self.spec.map_dims();
        self.counts[(a * m2 + b) * mc + d]
    }

    /// Sum of all counts; always equals `K * s1 * s2 * c`.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

impl FilterMapSpec {
    /// Coverage counts for every map cell.
    ///
    /// The index mapping acts independently per dimension, so the count at
    /// `(a, b, d)` is the product of three per-dimension cyclic coverages.
    /// The brute-force equivalent — enumerating the mapping over every
    /// (filter, element) pair — agrees cell for cell; tests hold the two
    /// routes against each other.
    pub fn coverage_counts(&self) -> CoverageCount {
        let c1 = cyclic_coverage(self.grid.k1, self.strides.x, self.shape.s1);
        let c2 = cyclic_coverage(self.grid.k2, self.strides.y, self.shape.s2);
        let cc = cyclic_coverage(self.grid.k3, self.strides.z, self.shape.c);
        let mut counts = Vec::with_capacity(self.map_len());
        for &a in &c1 {
            for &b in &c2 {
                let ab = a * b;
                for &d in &cc {
                    counts.push(ab * d);
                }
            }
        }
        CoverageCount {
            spec: *self,
            counts,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{ExtractionStrides, FilterGrid, FilterShape};

    fn reference_spec() -> FilterMapSpec {
        FilterMapSpec::new(
            FilterShape::new(3, 3, 64),
            FilterGrid::new(4, 4, 4),
            ExtractionStrides::new(2, 2, 16),
        )
        .unwrap()
    }

    #[test]
    fn per_dimension_pattern_for_stride_two() {
        // 4 positions, stride 2, extent 3 over length 8: even cells are hit
        // twice (origin plus the previous filter's trailing edge), odd once.
        assert_eq!(cyclic_coverage(4, 2, 3), vec![2, 1, 2, 1, 2, 1, 2, 1]);
    }

    #[test]
    fn full_extent_covers_every_cell_once_per_position() {
        // Extent equal to the axis length: each position wraps over the whole
        // axis exactly once.
        assert_eq!(cyclic_coverage(4, 16, 64), vec![4; 64]);
    }

    #[test]
    fn reference_counts_pattern() {
        let cov = reference_spec().coverage_counts();
        for d in 0..64 {
            assert_eq!(cov.count(0, 0, d), 16);
            assert_eq!(cov.count(1, 1, d), 4);
            assert_eq!(cov.count(0, 1, d), 8);
        }
        assert!(cov.counts().iter().all(|c| [4, 8, 16].contains(c)));
    }

    #[test]
    fn reference_total_counts_all_pairs() {
        let spec = reference_spec();
        let cov = spec.coverage_counts();
        assert_eq!(cov.total(), 36864);
        assert_eq!(cov.total(), spec.bank_len() as u64);
    }

    #[test]
    fn partition_spec_has_unit_counts() {
        let spec = FilterMapSpec::new(
            FilterShape::new(3, 3, 4),
            FilterGrid::new(2, 2, 2),
            ExtractionStrides::new(3, 3, 2),
        )
        .unwrap();
        // Spatial strides equal the extents, so spatial tiles partition the
        // map; the channel axis still overlaps (extent 4 > stride 2).
        let c1 = cyclic_coverage(2, 3, 3);
        assert_eq!(c1, vec![1; 6]);
        let cc = cyclic_coverage(2, 2, 4);
        assert_eq!(cc, vec![2; 4]);
        assert_eq!(spec.coverage_counts().counts(), vec![2u64; 144].as_slice());
    }

    #[test]
    fn no_sharing_spec_counts_are_all_one() {
        let spec = FilterMapSpec::new(
            FilterShape::new(3, 3, 4),
            FilterGrid::new(1, 1, 1),
            ExtractionStrides::new(3, 3, 4),
        )
        .unwrap();
        assert_eq!(spec.coverage_counts().counts(), vec![1u64; 36].as_slice());
    }
}
