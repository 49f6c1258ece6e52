use fm_core::Scalar;

use crate::error::{EngineError, Result};

/// Dense 4D tensor laid out `(batch, channels, height, width)` row-major,
/// width fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<S: Scalar> {
    dims: [usize; 4],
    data: Vec<S>,
}

impl<S: Scalar> Tensor4<S> {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor4 {
            dims,
            data: vec![S::ZERO; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<S>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(EngineError::shape(
                "tensor data",
                format!("{expected} elements for {dims:?}"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + h) * self.dims[3] + w
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> S {
        self.data[self.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: S) {
        let off = self.offset(n, c, h, w);
        self.data[off] = v;
    }

    /// Contiguous `(c, h, w)` block of one batch element.
    pub fn sample(&self, n: usize) -> &[S] {
        let stride = self.dims[1] * self.dims[2] * self.dims[3];
        &self.data[n * stride..(n + 1) * stride]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the given batch elements (in the given order) into a new tensor.
    pub fn select_batch(&self, indices: &[usize]) -> Tensor4<S> {
        let stride = self.dims[1] * self.dims[2] * self.dims[3];
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &n in indices {
            data.extend_from_slice(self.sample(n));
        }
        Tensor4 {
            dims: [indices.len(), self.dims[1], self.dims[2], self.dims[3]],
            data,
        }
    }
}
