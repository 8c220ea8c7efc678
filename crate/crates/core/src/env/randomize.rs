use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::node::StateValues;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Distribution {
    /// Closed interval `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
    Constant { value: f64 },
}

impl Distribution {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Distribution::Uniform { lo, hi } if lo == hi => lo,
            Distribution::Uniform { lo, hi } => rng.random_range(lo..=hi),
            Distribution::Constant { value } => value,
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Distribution::Uniform { lo, hi } => (lo, hi),
            Distribution::Constant { value } => (value, value),
        }
    }

    fn validate(&self) -> Result<(), String> {
        let (lo, hi) = self.bounds();
        if !lo.is_finite() || !hi.is_finite() {
            return Err("bounds must be finite".into());
        }
        if lo > hi {
            return Err(format!("empty interval [{lo}, {hi}]"));
        }
        Ok(())
    }
}

/// Draws a registered state from `distribution` at every reset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Randomization {
    pub state: String,
    pub distribution: Distribution,
}

/// Draws the delay of the channel into `target` uniformly from
/// `base ± half_width` at every reset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayRandomization {
    pub target: String,
    pub base: f64,
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub seed: u64,
    pub max_steps: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub randomizations: Vec<Randomization>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub delay_randomization: Vec<DelayRandomization>,
}

/// Values drawn for one episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeSample {
    pub states: StateValues,
    pub delays: BTreeMap<String, f64>,
}

impl EpisodeConfig {
    pub fn new(seed: u64, max_steps: u64) -> Self {
        EpisodeConfig {
            seed,
            max_steps,
            randomizations: Vec::new(),
            delay_randomization: Vec::new(),
        }
    }

    pub fn randomize(mut self, state: &str, distribution: Distribution) -> Self {
        self.randomizations.push(Randomization {
            state: state.into(),
            distribution,
        });
        self
    }

    pub fn randomize_delay(mut self, target: &str, base: f64, half_width: f64) -> Self {
        self.delay_randomization.push(DelayRandomization {
            target: target.into(),
            base,
            half_width,
        });
        self
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.max_steps == 0 {
            return Err(EnvError::Config("max_steps must be positive".into()));
        }
        for r in &self.randomizations {
            r.distribution
                .validate()
                .map_err(|e| EnvError::Config(format!("randomization of {:?}: {e}", r.state)))?;
        }
        for d in &self.delay_randomization {
            let ok = d.base.is_finite() && d.half_width.is_finite() && d.half_width >= 0.0;
            if !ok || d.base - d.half_width < 0.0 {
                return Err(EnvError::Config(format!(
                    "delay randomization of {:?} must stay non-negative",
                    d.target
                )));
            }
        }
        Ok(())
    }

    /// Draws every randomized value. The same seed always yields the same
    /// sample; states are drawn before delays, each in declaration order.
    pub fn sample(&self) -> EpisodeSample {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = EpisodeSample::default();
        for r in &self.randomizations {
            out.states.insert(r.state.clone(), r.distribution.sample(&mut rng));
        }
        for d in &self.delay_randomization {
            let spread = Distribution::Uniform {
                lo: d.base - d.half_width,
                hi: d.base + d.half_width,
            };
            out.delays.insert(d.target.clone(), spread.sample(&mut rng));
        }
        out
    }
}
