use crate::scalar::Scalar;
use crate::spec::{FilterMapSpec, SpecError};

/// The shared 3D parameter tensor of one layer.
///
/// Stored dense and row-major as `(spatial1, spatial2, channel)` with the
/// channel index fastest. Note the spatial-first order: a map reported
/// elsewhere as `channels x height x width` has its channel axis last here.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterMap<S: Scalar> {
    spec: FilterMapSpec,
    data: Vec<S>,
}

impl<S: Scalar> FilterMap<S> {
    /// Zero-filled map for a validated spec.
    pub fn zeroed(spec: FilterMapSpec) -> Result<Self, SpecError> {
        spec.validate()?;
        Ok(FilterMap {
            data: vec![S::ZERO; spec.map_len()],
            spec,
        })
    }

    /// Wraps existing values; `data` must have exactly `spec.map_len()` elements.
    pub fn from_data(spec: FilterMapSpec, data: Vec<S>) -> Result<Self, SpecError> {
        spec.validate()?;
        if data.len() != spec.map_len() {
            return Err(SpecError::ShapeMismatch {
                context: "filter map data",
                expected: spec.map_len(),
                got: data.len(),
            });
        }
        Ok(FilterMap { spec, data })
    }

    pub fn spec(&self) -> &FilterMapSpec {
        &self.spec
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// Flat offset of map coordinate `(a, b, d)`.
    #[inline]
    pub fn offset(&self, a: usize, b: usize, d: usize) -> usize {
        let (_, m2, mc) = self.spec.map_dims();
        (a * m2 + b) * mc + d
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, d: usize) -> S {
        self.data[self.offset(a, b, d)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, b: usize, d: usize, v: S) {
        let off = self.offset(a, b, d);
        self.data[off] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Materializes all K filters by gathering through the index mapping.
    ///
    /// Filters come out in filter-origin order (ascending `k`), each laid out
    /// `(s1, s2, c)` with the channel fastest, so `bank.filters[k][t]` equals
    /// the map value at `index_map(k, t)` for every `k` and `t`.
    pub fn extract_filters(&self) -> FilterBank<S> {
        let spec = self.spec;
        let (m1, m2, mc) = spec.map_dims();
        let (s1, s2, c) = (spec.shape.s1, spec.shape.s2, spec.shape.c);
        let mut data = Vec::with_capacity(spec.bank_len());
        for k in 0..spec.filter_count() {
            let (k1_idx, k2_idx, k3_idx) = spec.grid.filter_origin_unchecked(k);
            let a0 = k1_idx * spec.strides.x;
            let b0 = k2_idx * spec.strides.y;
            let d0 = k3_idx * spec.strides.z;
            for i in 0..s1 {
                let a = (a0 + i) % m1;
                for j in 0..s2 {
                    let b = (b0 + j) % m2;
                    let row = (a * m2 + b) * mc;
                    for ch in 0..c {
                        let d = (d0 + ch) % mc;
                        data.push(self.data[row + d]);
                    }
                }
            }
        }
        FilterBank { spec, data }
    }
}

/// K materialized filters extracted from one map, or the same shape holding
/// per-filter gradients on the way back.
///
/// Flat layout: filter-major, each filter `(s1, s2, c)` row-major with the
/// channel index fastest — i.e. ascending `k`, then lexicographic `(i, j, ch)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank<S: Scalar> {
    spec: FilterMapSpec,
    data: Vec<S>,
}

impl<S: Scalar> FilterBank<S> {
    pub fn zeroed(spec: FilterMapSpec) -> Result<Self, SpecError> {
        spec.validate()?;
        Ok(FilterBank {
            data: vec![S::ZERO; spec.bank_len()],
            spec,
        })
    }

    /// Wraps existing values; `data` must hold `K * s1 * s2 * c` elements.
    pub fn from_data(spec: FilterMapSpec, data: Vec<S>) -> Result<Self, SpecError> {
        spec.validate()?;
        if data.len() != spec.bank_len() {
            return Err(SpecError::ShapeMismatch {
                context: "filter bank data",
                expected: spec.bank_len(),
                got: data.len(),
            });
        }
        Ok(FilterBank { spec, data })
    }

    pub fn spec(&self) -> &FilterMapSpec {
        &self.spec
    }

    pub fn filter_count(&self) -> usize {
        self.spec.filter_count()
    }

    pub fn filter_len(&self) -> usize {
        self.spec.filter_len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// Contiguous elements of filter `k`.
    pub fn filter(&self, k: usize) -> &[S] {
        let len = self.filter_len();
        &self.data[k * len..(k + 1) * len]
    }

    /// Flat offset of local coordinate `(i, j, ch)` within one filter.
    #[inline]
    pub fn local_offset(&self, i: usize, j: usize, ch: usize) -> usize {
        (i * self.spec.shape.s2 + j) * self.spec.shape.c + ch
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize, ch: usize) -> S {
        self.data[k * self.filter_len() + self.local_offset(i, j, ch)]
    }
}
