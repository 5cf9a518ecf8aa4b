//! Experiment driver, figure rendering and command-line front end for
//! `levelvote`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod experiment;
pub mod render;

use levelvote::gridmap::GridError;
use levelvote::locengine::LocError;
use levelvote::synthgen::SynthError;
use levelvote::tuner::TuneError;
use std::path::PathBuf;

pub use config::{Algorithm, ExperimentConfig, MapNoise, ScenarioSource, SyntheticSource};
pub use experiment::{run_experiment, split_dataset, ExperimentReport};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Loc(#[from] LocError),
    #[error(transparent)]
    Tune(#[from] TuneError),
    #[error("config: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: image: {reason}")]
    Image { path: PathBuf, reason: String },
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Machine-readable error class.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Grid(e) => e.kind(),
            HarnessError::Synth(_) => "synthesis",
            HarnessError::Loc(_) => "localization",
            HarnessError::Tune(_) => "tuning",
            HarnessError::Config(_) => "config",
            HarnessError::Csv(_) => "csv",
            HarnessError::Io { .. } => "io",
            HarnessError::Image { .. } => "image",
        }
    }
}
