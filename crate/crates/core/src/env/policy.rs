use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{latest, Action, Observation};
use crate::engine::{wrap_angle, PendulumParams};

/// Maps observations to actions. `reset` is called with the episode seed
/// before the first action.
pub trait Policy {
    fn reset(&mut self, _seed: u64) {}

    fn act(&mut self, step: u64, sim_time: f64, observation: &Observation) -> Action;
}

fn single(name: &str, u: f64) -> Action {
    Action::from([(name.to_string(), vec![u])])
}

#[derive(Debug, Clone)]
pub struct ZeroPolicy {
    pub action: String,
    pub dim: usize,
}

impl ZeroPolicy {
    pub fn new(action: &str) -> Self {
        ZeroPolicy {
            action: action.into(),
            dim: 1,
        }
    }
}

impl Policy for ZeroPolicy {
    fn act(&mut self, _: u64, _: f64, _: &Observation) -> Action {
        Action::from([(self.action.clone(), vec![0.0; self.dim])])
    }
}

/// Open-loop sinusoid `amplitude * sin(2 pi frequency t)` evaluated at the
/// simulated time of the observation.
#[derive(Debug, Clone)]
pub struct TapePolicy {
    pub action: String,
    pub amplitude: f64,
    pub frequency: f64,
}

impl TapePolicy {
    pub fn new(action: &str, amplitude: f64, frequency: f64) -> Self {
        TapePolicy {
            action: action.into(),
            amplitude,
            frequency,
        }
    }
}

impl Policy for TapePolicy {
    fn act(&mut self, _: u64, sim_time: f64, _: &Observation) -> Action {
        single(&self.action, self.amplitude * (2.0 * PI * self.frequency * sim_time).sin())
    }
}

/// Uniform actions in `[-limit, limit]`, reseeded every episode.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    pub action: String,
    pub limit: f64,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(action: &str, limit: f64) -> Self {
        RandomPolicy {
            action: action.into(),
            limit,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

impl Policy for RandomPolicy {
    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn act(&mut self, _: u64, _: f64, _: &Observation) -> Action {
        let u = if self.limit > 0.0 {
            self.rng.random_range(-self.limit..=self.limit)
        } else {
            0.0
        };
        single(&self.action, u)
    }
}

/// Energy-based swing-up with a PD catch near upright. Below the upright
/// energy it pushes at full effort along the angular velocity; above it
/// brakes in proportion to the excess.
#[derive(Debug, Clone)]
pub struct SwingUpPolicy {
    pub theta: String,
    pub thetadot: String,
    pub action: String,
    pub params: PendulumParams,
    pub kp: f64,
    pub kd: f64,
    pub brake: f64,
    /// Angle from upright inside which the PD law takes over.
    pub catch_angle: f64,
    pub limit: f64,
}

impl Default for SwingUpPolicy {
    fn default() -> Self {
        SwingUpPolicy {
            theta: "th".into(),
            thetadot: "thdot".into(),
            action: "volt".into(),
            params: PendulumParams::default(),
            kp: 1.5,
            kd: 0.15,
            brake: 0.5,
            catch_angle: 0.8,
            limit: 2.0,
        }
    }
}

impl SwingUpPolicy {
    pub fn control(&self, theta: f64, thetadot: f64) -> f64 {
        let phi = wrap_angle(theta - PI);
        let u = if phi.abs() < self.catch_angle {
            -self.kp * phi - self.kd * thetadot
        } else {
            let p = &self.params;
            let mgl = p.mass * p.gravity * p.length;
            let excess = p.energy([theta, thetadot]) - 2.0 * mgl;
            let direction = if thetadot >= 0.0 { 1.0 } else { -1.0 };
            if excess < 0.0 {
                self.limit * direction
            } else {
                -self.limit * direction * (self.brake * excess / mgl).min(1.0)
            }
        };
        u.clamp(-self.limit, self.limit)
    }
}

impl Policy for SwingUpPolicy {
    fn act(&mut self, _: u64, _: f64, observation: &Observation) -> Action {
        let theta = latest(observation, &self.theta);
        let thetadot = latest(observation, &self.thetadot);
        single(&self.action, self.control(theta, thetadot))
    }
}
