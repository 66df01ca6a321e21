//! `lwm` — command-line front end for the desk-scale driving stack.
//!
//! Subcommands cover the whole artifact loop: `gen-data` builds a scenario
//! corpus, `train` fits the model, `eval` scores it open- or closed-loop,
//! `ablate` sweeps component toggles and temporal strides, and `plot` turns
//! logs and reports into SVG figures. Every command is deterministic given
//! its flags and seed, and every output directory carries a manifest.

use std::path::Path;

use thiserror::Error;

pub mod ablate;
pub mod evalcmd;
pub mod gendata;
pub mod manifest;
pub mod plotcmd;
pub mod policy;
pub mod svg;

pub use ablate::{ablate, AblateOutcome};
pub use evalcmd::{eval, EvalMode, EvalOptions, EvalReport, ScenarioReport};
pub use gendata::{difficulty_plan, gen_data, parse_mix, GenSummary};
pub use manifest::{fnv1a_bytes, RunManifest};
pub use plotcmd::plot;
pub use policy::{load_eval_params, run_rollout, EvalModel, Policy, RolloutOptions};

/// Environment variable consulted when `--corpus` is not given.
pub const CORPUS_ENV: &str = "LWM_CORPUS";

/// Exit code classes: flag/configuration problems, missing or corrupt data,
/// and numerical failures each get their own code so scripts can tell them
/// apart.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<numcore::NumError> for CliError {
    fn from(e: numcore::NumError) -> Self {
        match e {
            numcore::NumError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<model::ModelError> for CliError {
    fn from(e: model::ModelError) -> Self {
        match e {
            model::ModelError::Config(m) => CliError::Config(m),
            model::ModelError::Num(inner) => inner.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<worldgen::WorldError> for CliError {
    fn from(e: worldgen::WorldError) -> Self {
        match e {
            worldgen::WorldError::Num(inner) => inner.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<metrics::MetricError> for CliError {
    fn from(e: metrics::MetricError) -> Self {
        match e {
            metrics::MetricError::Range(m) => CliError::Numerical(m),
            metrics::MetricError::World(inner) => inner.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<trainer::TrainError> for CliError {
    fn from(e: trainer::TrainError) -> Self {
        match e {
            trainer::TrainError::Config(m) => CliError::Config(m),
            trainer::TrainError::Toml { .. } => CliError::Config(e.to_string()),
            trainer::TrainError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            trainer::TrainError::World(inner) => inner.into(),
            trainer::TrainError::Model(inner) => inner.into(),
            trainer::TrainError::Num(inner) => inner.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

/// Wraps an I/O failure with the path it happened on.
pub fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}
