//! Desk-scale trainer and toolkit around shared-filter-map convolution
//! networks: run/network configuration files, dataset ingestion (IDX, CSV,
//! synthetic), planning reports, seeded-deterministic SGD training,
//! evaluation, gradient checking, and `FM3D` checkpoints.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod netdesc;
pub mod record;
pub mod train;

pub use config::{DataSpec, Parametrization, Precision, RunConfig};
pub use error::CliError;
