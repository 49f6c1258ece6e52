use std::path::PathBuf;

use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::config::ConfigError;
use crate::dataset::DataError;
use crate::record::RecordError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Plan(#[from] planner::NetPlanError),
    #[error(transparent)]
    Engine(#[from] nn_engine::EngineError),
    #[error(transparent)]
    Spec(#[from] fm_core::SpecError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("layer `{layer}`: {msg}")]
    Net { layer: String, msg: String },
    #[error("non-finite loss at training step {step}")]
    NonFiniteLoss { step: usize },
    #[error("non-finite parameter values after epoch {epoch}")]
    NonFiniteParams { epoch: usize },
    #[error("cannot write `{path}`: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Check(String),
}
