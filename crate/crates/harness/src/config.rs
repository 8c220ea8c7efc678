use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ratesync::demo;
use ratesync::graph::GraphSpec;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// Highest target real-time factor accepted in asynchronous mode. Beyond it
/// OS scheduling noise dominates whatever is being measured.
pub const MAX_ASYNC_RTF: f64 = 32.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sync,
    Async,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Sync => "sync",
            Mode::Async => "async",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sync" => Ok(Mode::Sync),
            "async" => Ok(Mode::Async),
            other => Err(format!("unknown mode {other:?}; expected sync or async")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Tape,
    Random,
    Zero,
    Swingup,
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tape" => Ok(PolicyKind::Tape),
            "random" => Ok(PolicyKind::Random),
            "zero" => Ok(PolicyKind::Zero),
            "swingup" => Ok(PolicyKind::Swingup),
            other => Err(format!("unknown policy {other:?}; expected tape, random, zero or swingup")),
        }
    }
}

/// Settings shared by every experiment. Missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Graph file, or one of the built-in names `filtered`, `direct`.
    pub graph: String,
    pub engine: String,
    pub modes: Vec<Mode>,
    pub target_rtf: Vec<f64>,
    pub runs: u32,
    pub episode_seconds: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub action: String,
    /// Observation holding the pendulum angle.
    pub theta: String,
    /// Action tape `amplitude * sin(2 pi frequency t)`.
    pub tape_amplitude: f64,
    pub tape_frequency: f64,
    pub policy: PolicyKind,
    /// Injected cost per callback for the speed-up experiment.
    pub cost_ms: f64,
    /// Simulated seconds per speed-up run.
    pub speedup_seconds: f64,
    pub stall_timeout_s: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            graph: "filtered".into(),
            engine: "ode".into(),
            modes: vec![Mode::Sync],
            target_rtf: vec![1.0, 5.0, 0.0],
            runs: 5,
            episode_seconds: 2.0,
            seed: 0,
            out: None,
            action: "volt".into(),
            theta: "th".into(),
            tape_amplitude: 0.5,
            tape_frequency: 0.5,
            policy: PolicyKind::Tape,
            cost_ms: 5.0,
            speedup_seconds: 3.0,
            stall_timeout_s: 10.0,
        }
    }
}

impl ExperimentConfig {
    /// Applies the keys present in the TOML file at `path` over `self`.
    pub fn overlay_file(&self, path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        self.overlay(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn overlay(&self, text: &str) -> Result<Self, String> {
        let file: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        let mut merged = toml::Table::try_from(self).map_err(|e| e.to_string())?;
        merged.extend(file);
        merged.try_into().map_err(|e: toml::de::Error| e.to_string())
    }

    pub fn validate_variance(&self) -> Result<(), HarnessError> {
        if self.runs < 2 {
            return Err(HarnessError::Config(format!("variance needs at least 2 runs, got {}", self.runs)));
        }
        if self.modes.is_empty() || self.target_rtf.is_empty() {
            return Err(HarnessError::Config("at least one mode and one target_rtf are required".into()));
        }
        for &rtf in &self.target_rtf {
            if !(rtf.is_finite() && rtf >= 0.0) {
                return Err(HarnessError::Config(format!("target_rtf must be finite and >= 0, got {rtf}")));
            }
            if self.modes.contains(&Mode::Async) && !(rtf > 0.0 && rtf <= MAX_ASYNC_RTF) {
                return Err(HarnessError::Config(format!(
                    "async mode needs 0 < target_rtf <= {MAX_ASYNC_RTF}, got {rtf}"
                )));
            }
        }
        self.validate_episode()
    }

    pub fn validate_episode(&self) -> Result<(), HarnessError> {
        if !(self.episode_seconds.is_finite() && self.episode_seconds > 0.0) {
            return Err(HarnessError::Config(format!(
                "episode_seconds must be positive, got {}",
                self.episode_seconds
            )));
        }
        if !(self.stall_timeout_s.is_finite() && self.stall_timeout_s > 0.0) {
            return Err(HarnessError::Config("stall_timeout_s must be positive".into()));
        }
        Ok(())
    }

    pub fn load_graph(&self) -> Result<GraphSpec, HarnessError> {
        Ok(match self.graph.as_str() {
            "filtered" => demo::filtered_graph()?,
            "direct" => demo::direct_graph()?,
            path => GraphSpec::load(Path::new(path))?,
        })
    }
}
