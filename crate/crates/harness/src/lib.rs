//! Experiment runner: determinism sweeps, delay speed-up measurement,
//! protocol conformance fuzzing and single-episode rollouts.

pub mod config;
pub mod experiments;
pub mod metrics;

use std::path::PathBuf;

use ratesync::env::EnvError;
use ratesync::executor::RunError;
use ratesync::graph::GraphError;
use ratesync::nodes::BuildError;
use thiserror::Error;

pub use config::{ExperimentConfig, Mode, PolicyKind};
pub use experiments::{
    run_conformance, run_delay_speedup, run_single, run_variance_sweep, ConformanceReport, SettingResult,
    SpeedupResult,
};
pub use metrics::MetricsRecord;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("episode fault in {setting}: {error}")]
    Episode { setting: String, error: String },
    #[error("conformance failure: {0}")]
    Conformance(String),
    #[error("cannot write {path}: {error}")]
    Output { path: PathBuf, error: String },
}

impl HarnessError {
    /// 0 success, 1 episode fault, 2 configuration error, 3 conformance
    /// failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Episode { .. } => 1,
            HarnessError::Conformance(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn episode(setting: &str, error: impl std::fmt::Display) -> Self {
        HarnessError::Episode {
            setting: setting.into(),
            error: error.to_string(),
        }
    }

    pub(crate) fn from_env(setting: &str, error: EnvError) -> Self {
        match error {
            EnvError::Config(_)
            | EnvError::Build(_)
            | EnvError::UnknownState(_)
            | EnvError::UnknownDelayTarget(_)
            | EnvError::ActionMismatch { .. }
            | EnvError::ActionDim { .. } => HarnessError::Config(error.to_string()),
            other => HarnessError::episode(setting, other),
        }
    }

    pub(crate) fn from_run(setting: &str, error: RunError) -> Self {
        match error {
            RunError::Config(e) => HarnessError::Config(e),
            other => HarnessError::episode(setting, other),
        }
    }
}
