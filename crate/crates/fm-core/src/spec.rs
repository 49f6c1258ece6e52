use thiserror::Error;

use crate::ratio::Rational;

/// Shape of one extracted filter: two spatial extents and a channel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FilterShape {
    pub s1: usize,
    pub s2: usize,
    pub c: usize,
}

impl FilterShape {
    pub fn new(s1: usize, s2: usize, c: usize) -> Self {
        FilterShape { s1, s2, c }
    }

    /// Elements in one filter.
    pub fn len(&self) -> usize {
        self.s1 * self.s2 * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How many filters are laid out along each map dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FilterGrid {
    pub k1: usize,
    pub k2: usize,
    pub k3: usize,
}

impl FilterGrid {
    pub fn new(k1: usize, k2: usize, k3: usize) -> Self {
        FilterGrid { k1, k2, k3 }
    }

    /// Total filter count K.
    pub fn count(&self) -> usize {
        self.k1 * self.k2 * self.k3
    }

    /// Grid coordinates of filter `k`, row-major with `k3` fastest:
    /// `k = k1_idx * (k2 * k3) + k2_idx * k3 + k3_idx`.
    pub fn filter_origin(&self, k: usize) -> Result<(usize, usize, usize), SpecError> {
        if k >= self.count() {
            return Err(SpecError::IndexOutOfRange {
                what: "filter",
                index: k,
                limit: self.count(),
            });
        }
        Ok(self.filter_origin_unchecked(k))
    }

    #[inline]
    pub(crate) fn filter_origin_unchecked(&self, k: usize) -> (usize, usize, usize) {
        let k3_idx = k % self.k3;
        let rest = k / self.k3;
        let k2_idx = rest % self.k2;
        let k1_idx = rest / self.k2;
        (k1_idx, k2_idx, k3_idx)
    }
}

/// Step between consecutive filter origins *inside the map*. Distinct from
/// any convolution stride over an input image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExtractionStrides {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl ExtractionStrides {
    pub fn new(x: usize, y: usize, z: usize) -> Self {
        ExtractionStrides { x, y, z }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("dimension `{field}` must be >= 1")]
    NonPositiveDimension { field: &'static str },
    #[error("channel constraint violated: k3*z = {k3}*{z} = {product} != c = {c}", product = .k3 * .z)]
    ChannelConstraintViolated { k3: usize, z: usize, c: usize },
    #[error("extraction stride {stride} exceeds filter extent {extent} along {axis}")]
    StrideExceedsFilter {
        axis: &'static str,
        stride: usize,
        extent: usize,
    },
    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("shape mismatch in {context}: expected {expected} elements, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Full static description of one filter-mapped layer.
///
/// The map holds `k1*k2*k3` filters of shape `s1 x s2 x c`; its own
/// dimensions are exactly `(k1*x, k2*y, k3*z)` and the channel side is pinned
/// to the filter channel count (`k3*z == c`). Strides never exceed the filter
/// extents, which guarantees every map element backs at least one filter
/// element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FilterMapSpec {
    pub shape: FilterShape,
    pub grid: FilterGrid,
    pub strides: ExtractionStrides,
}

impl FilterMapSpec {
    /// Builds and validates in one step.
    pub fn new(
        shape: FilterShape,
        grid: FilterGrid,
        strides: ExtractionStrides,
    ) -> Result<Self, SpecError> {
        let spec = FilterMapSpec {
            shape,
            grid,
            strides,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let fields: [(&'static str, usize); 9] = [
            ("s1", self.shape.s1),
            ("s2", self.shape.s2),
            ("c", self.shape.c),
            ("k1", self.grid.k1),
            ("k2", self.grid.k2),
            ("k3", self.grid.k3),
            ("x", self.strides.x),
            ("y", self.strides.y),
            ("z", self.strides.z),
        ];
        for (field, value) in fields {
            if value == 0 {
                return Err(SpecError::NonPositiveDimension { field });
            }
        }
        if self.grid.k3 * self.strides.z != self.shape.c {
            return Err(SpecError::ChannelConstraintViolated {
                k3: self.grid.k3,
                z: self.strides.z,
                c: self.shape.c,
            });
        }
        let stride_axes: [(&'static str, usize, usize); 3] = [
            ("spatial dim 1", self.strides.x, self.shape.s1),
            ("spatial dim 2", self.strides.y, self.shape.s2),
            ("channel", self.strides.z, self.shape.c),
        ];
        for (axis, stride, extent) in stride_axes {
            if stride > extent {
                return Err(SpecError::StrideExceedsFilter {
                    axis,
                    stride,
                    extent,
                });
            }
        }
        Ok(())
    }

    /// Map dimensions `(k1*x, k2*y, k3*z)`, ordered (spatial1, spatial2, channel).
    pub fn map_dims(&self) -> (usize, usize, usize) {
        (
            self.grid.k1 * self.strides.x,
            self.grid.k2 * self.strides.y,
            self.grid.k3 * self.strides.z,
        )
    }

    /// Element count of the map tensor.
    pub fn map_len(&self) -> usize {
        let (m1, m2, mc) = self.map_dims();
        m1 * m2 * mc
    }

    /// Element count of one extracted filter.
    pub fn filter_len(&self) -> usize {
        self.shape.len()
    }

    /// Total filter count K.
    pub fn filter_count(&self) -> usize {
        self.grid.count()
    }

    /// Element count of the whole extracted bank, `K * s1 * s2 * c`.
    pub fn bank_len(&self) -> usize {
        self.filter_count() * self.filter_len()
    }

    /// The index mapping from (filter `k`, local element `t = (i, j, ch)`) to
    /// a map coordinate `(a, b, d)`. Cyclic in all three dimensions: a filter
    /// whose extent passes a map edge wraps around to the opposite side.
    pub fn index_map(
        &self,
        k: usize,
        t: (usize, usize, usize),
    ) -> Result<(usize, usize, usize), SpecError> {
        let (i, j, ch) = t;
        let locals: [(&'static str, usize, usize); 3] = [
            ("filter local i", i, self.shape.s1),
            ("filter local j", j, self.shape.s2),
            ("filter local channel", ch, self.shape.c),
        ];
        for (what, index, limit) in locals {
            if index >= limit {
                return Err(SpecError::IndexOutOfRange { what, index, limit });
            }
        }
        let origin = self.grid.filter_origin(k)?;
        Ok(self.index_map_unchecked(origin, t))
    }

    #[inline]
    pub(crate) fn index_map_unchecked(
        &self,
        origin: (usize, usize, usize),
        t: (usize, usize, usize),
    ) -> (usize, usize, usize) {
        let (m1, m2, mc) = self.map_dims();
        let (k1_idx, k2_idx, k3_idx) = origin;
        let (i, j, ch) = t;
        (
            (k1_idx * self.strides.x + i) % m1,
            (k2_idx * self.strides.y + j) % m2,
            (k3_idx * self.strides.z + ch) % mc,
        )
    }

    /// Exact ratio of the K independent filters' element count to the map's
    /// element count: `K*s1*s2*c / (k1x * k2y * k3z)`, which reduces to
    /// `s1*s2*c / (x*y*z)`.
    pub fn param_ratio(&self) -> Rational {
        let full = self.bank_len() as u64;
        let ratio = Rational::new(full, self.map_len() as u64);
        debug_assert_eq!(
            ratio,
            Rational::new(
                self.shape.len() as u64,
                (self.strides.x * self.strides.y * self.strides.z) as u64
            )
        );
        ratio
    }
}
