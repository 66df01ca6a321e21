//! Training loop: loss composition with ablation toggles, AdamW with
//! warmup/cosine scheduling, EMA target maintenance, checkpointing and
//! deterministic resume.

use std::path::PathBuf;

use thiserror::Error;

pub mod config;
pub mod data;
pub mod loss;
pub mod optim;
pub mod schedule;
pub mod train;

pub use config::{stride_rows, Geometry, Toggles, TrainConfig};
pub use data::{assemble, load_samples, scenario_config_for, split_holdout, Sample};
pub use loss::{total_loss, LossTerms};
pub use optim::AdamW;
pub use schedule::lr_at;
pub use train::{command_accuracy, read_log, train, StepLog, TrainOutcome};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("loss term {term} is not finite at step {step}")]
    NonFinite { term: &'static str, step: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    World(#[from] worldgen::WorldError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Num(#[from] numcore::NumError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

pub(crate) fn io_err(path: &std::path::Path, source: std::io::Error) -> TrainError {
    TrainError::Io { path: path.to_path_buf(), source }
}
