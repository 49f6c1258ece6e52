//! Compact convolution-filter storage backed by one shared 3D tensor per
//! layer (a *filter map*), from which a layer's K filters are extracted as
//! overlapping, cyclically indexed submatrices.
//!
//! Everything in this crate is a pure, deterministic function of immutable
//! inputs and is safe to call concurrently on shared data:
//!
//! - [`FilterMapSpec`] describes one layer's map: filter shape, filter grid
//!   counts, and extraction strides, with validation of the channel
//!   constraint `k3 * z == c`.
//! - [`FilterMap`] holds the shared parameter tensor; [`FilterMap::extract_filters`]
//!   materializes the [`FilterBank`] of K full-size filters.
//! - [`FilterMapSpec::index_map`] is the cyclic mapping from (filter, local
//!   element) to a map coordinate; [`FilterMapSpec::coverage_counts`] counts
//!   how many (filter, element) pairs land on each map cell.
//! - [`aggregate_gradients`] scatters per-filter gradients back onto the map,
//!   either summed ([`GradMode::Sum`], the exact chain-rule gradient) or
//!   divided by the coverage count ([`GradMode::Average`], the default).
//! - [`FilterMapSpec::param_ratio`] reports the compression ratio as an exact
//!   [`Rational`].

mod coverage;
mod grad;
mod map;
mod ratio;
mod scalar;
mod spec;

pub use coverage::{cyclic_coverage, CoverageCount};
pub use grad::{aggregate_bank, aggregate_gradients, GradMode};
pub use map::{FilterBank, FilterMap};
pub use ratio::Rational;
pub use scalar::Scalar;
pub use spec::{ExtractionStrides, FilterGrid, FilterMapSpec, FilterShape, SpecError};
