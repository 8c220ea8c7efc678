//! Engines: the nodes that own simulated time. `ode` integrates pendulum
//! dynamics with fixed-step RK4; `counter` is a trivial stand-in used to
//! show that graphs are engine-independent.

mod counter;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::NodeSpec;
use crate::node::{CallbackContext, NodeBehavior, NodeError, StateValues};
use crate::nodes::BuildError;
use crate::transport::Payload;

pub use counter::CounterEngine;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid pendulum parameters: {0}")]
    InvalidParams(String),
    #[error("state became non-finite at step {step}: {q:?}")]
    NonFinite { step: u64, q: [f64; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InertiaModel {
    /// Point mass at the end of a massless arm: J = m l^2.
    Disk,
    /// Uniform rod: J = m l^2 / 3.
    Rod,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub damping: f64,
    pub torque_gain: f64,
    pub gravity: f64,
    pub model: InertiaModel,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams {
            mass: 0.033,
            length: 0.1,
            damping: 3e-4,
            torque_gain: 0.03,
            gravity: 9.81,
            model: InertiaModel::Disk,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<(), EngineError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;
        if !positive(self.mass) || !positive(self.length) {
            return Err(EngineError::InvalidParams(format!(
                "mass and length must be positive (mass={}, length={})",
                self.mass, self.length
            )));
        }
        if !non_negative(self.damping) || !non_negative(self.torque_gain) || !non_negative(self.gravity) {
            return Err(EngineError::InvalidParams(format!(
                "damping, torque_gain and gravity must be non-negative (b={}, K={}, g={})",
                self.damping, self.torque_gain, self.gravity
            )));
        }
        Ok(())
    }

    pub fn inertia(&self) -> f64 {
        let ml2 = self.mass * self.length * self.length;
        match self.model {
            InertiaModel::Disk => ml2,
            InertiaModel::Rod => ml2 / 3.0,
        }
    }

    /// Period of small undamped oscillations about the hanging position.
    pub fn small_angle_period(&self) -> f64 {
        2.0 * PI * (self.inertia() / (self.mass * self.gravity * self.length)).sqrt()
    }

    /// Kinetic plus potential energy, zero when hanging at rest.
    pub fn energy(&self, q: [f64; 2]) -> f64 {
        0.5 * self.inertia() * q[1] * q[1] + self.mass * self.gravity * self.length * (1.0 - q[0].cos())
    }

    fn derivative(&self, q: [f64; 2], torque: f64) -> [f64; 2] {
        let [theta, thetadot] = q;
        let mgl = self.mass * self.gravity * self.length;
        [
            thetadot,
            (-mgl * theta.sin() - self.damping * thetadot + torque) / self.inertia(),
        ]
    }
}

/// Inputs held constant over one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepInputs {
    /// Actuator command, scaled by the torque gain.
    pub u: f64,
    /// External torque in N·m.
    pub disturbance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineState {
    pub step_index: u64,
    /// `[theta, thetadot]`; theta is never wrapped.
    pub q: [f64; 2],
}

impl EngineState {
    pub fn new(q: [f64; 2]) -> Self {
        EngineState { step_index: 0, q }
    }

    pub fn sim_time(&self, rate: f64) -> f64 {
        self.step_index as f64 / rate
    }
}

/// Advances the state by one RK4 step of `1 / rate` seconds.
pub fn step(
    state: &EngineState,
    inputs: StepInputs,
    params: &PendulumParams,
    rate: f64,
) -> Result<EngineState, EngineError> {
    let h = 1.0 / rate;
    let torque = params.torque_gain * inputs.u + inputs.disturbance;
    let f = |q: [f64; 2]| params.derivative(q, torque);
    let add = |q: [f64; 2], d: [f64; 2], s: f64| [q[0] + s * d[0], q[1] + s * d[1]];
    let q = state.q;
    let k1 = f(q);
    let k2 = f(add(q, k1, h / 2.0));
    let k3 = f(add(q, k2, h / 2.0));
    let k4 = f(add(q, k3, h));
    let next = [
        q[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        q[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ];
    let step_index = state.step_index + 1;
    if !next.iter().all(|v| v.is_finite()) {
        return Err(EngineError::NonFinite { step: step_index, q: next });
    }
    Ok(EngineState { step_index, q: next })
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let wrapped = theta - 2.0 * PI * ((theta + PI) / (2.0 * PI)).floor();
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else {
        wrapped
    }
}

fn lookup(spec: &NodeSpec, key: &str) -> Option<f64> {
    spec.param(key)
}

struct Pendulum {
    name: String,
    u_input: Option<usize>,
    disturbance_input: Option<usize>,
    defaults: PendulumParams,
    initial: [f64; 2],
    params: PendulumParams,
    state: EngineState,
}

impl Pendulum {
    fn configure(&self, values: &StateValues) -> Result<(PendulumParams, [f64; 2]), NodeError> {
        let get = |key: &str, default: f64| {
            values
                .get(&format!("{}/{key}", self.name))
                .copied()
                .unwrap_or(default)
        };
        let d = &self.defaults;
        let params = PendulumParams {
            mass: get("mass", d.mass),
            length: get("length", d.length),
            damping: get("damping", d.damping),
            torque_gain: get("torque_gain", d.torque_gain),
            gravity: get("gravity", d.gravity),
            model: d.model,
        };
        params.validate().map_err(|e| NodeError::Failed(format!("{}: {e}", self.name)))?;
        let initial = [get("theta0", self.initial[0]), get("thetadot0", self.initial[1])];
        Ok((params, initial))
    }
}

/// Engine node integrating one pendulum per object output `<object>/state`.
///
/// Callback 0 publishes the initial state. Callback `k >= 1` integrates
/// over `[t_{k-1}, t_k]` with the most recently consumed actuator values
/// held constant.
pub struct OdeEngine {
    rate: f64,
    pendulums: Vec<Pendulum>,
}

impl OdeEngine {
    pub fn from_spec(spec: &NodeSpec) -> Result<Self, BuildError> {
        let mut pendulums = Vec::new();
        for out in &spec.outputs {
            let name = out
                .name
                .strip_suffix("/state")
                .ok_or_else(|| BuildError::param(spec, &out.name, "engine outputs must be named <object>/state"))?;
            if out.dim != 2 {
                return Err(BuildError::param(spec, &out.name, "pendulum state has dimension 2"));
            }
            let defaults = PendulumParams::default();
            let p = |key: &str, default: f64| lookup(spec, &format!("{name}/{key}")).unwrap_or(default);
            let model = if p("rod", 0.0) != 0.0 {
                InertiaModel::Rod
            } else {
                InertiaModel::Disk
            };
            let defaults = PendulumParams {
                mass: p("mass", defaults.mass),
                length: p("length", defaults.length),
                damping: p("damping", defaults.damping),
                torque_gain: p("torque_gain", defaults.torque_gain),
                gravity: p("gravity", defaults.gravity),
                model,
            };
            defaults
                .validate()
                .map_err(|e| BuildError::param(spec, name, &e.to_string()))?;
            let initial = [p("theta0", 0.0), p("thetadot0", 0.0)];
            let input = |port: &str| spec.inputs.iter().position(|c| c.name == format!("{name}/{port}"));
            pendulums.push(Pendulum {
                name: name.to_string(),
                u_input: input("u"),
                disturbance_input: input("disturbance"),
                defaults,
                initial,
                params: defaults,
                state: EngineState::new(initial),
            });
        }
        Ok(OdeEngine {
            rate: spec.rate,
            pendulums,
        })
    }
}

impl NodeBehavior for OdeEngine {
    fn reset(&mut self, values: &StateValues) -> Result<(), NodeError> {
        for p in &mut self.pendulums {
            let (params, initial) = p.configure(values)?;
            p.params = params;
            p.state = EngineState::new(initial);
        }
        Ok(())
    }

    fn callback(&mut self, ctx: &CallbackContext<'_>) -> Result<Vec<Payload>, NodeError> {
        let mut out = Vec::with_capacity(self.pendulums.len());
        for p in &mut self.pendulums {
            if ctx.k > 0 {
                let held = |i: Option<usize>| i.map_or(0.0, |i| ctx.inputs[i].latest().first());
                let inputs = StepInputs {
                    u: held(p.u_input),
                    disturbance: held(p.disturbance_input),
                };
                p.state = step(&p.state, inputs, &p.params, self.rate)
                    .map_err(|e| NodeError::NonFinite(format!("{}: {e}", p.name)))?;
            }
            out.push(Payload::new(p.state.q.to_vec()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(q: [f64; 2], steps: u64, params: &PendulumParams, rate: f64) -> EngineState {
        let mut s = EngineState::new(q);
        for _ in 0..steps {
            s = step(&s, StepInputs::default(), params, rate).unwrap();
        }
        s
    }

    #[test]
    fn equilibria_are_fixed_points() {
        let p = PendulumParams::default();
        assert_eq!(run([0.0, 0.0], 100, &p, 100.0).q, [0.0, 0.0]);
        let top = run([PI, 0.0], 100, &p, 100.0).q;
        // sin(pi) is 1.2e-16 in floating point; the drift stays negligible.
        assert!((top[0] - PI).abs() < 1e-9 && top[1].abs() < 1e-9, "{top:?}");
    }

    #[test]
    fn step_is_deterministic() {
        let p = PendulumParams::default();
        let s = EngineState::new([0.3, -1.2]);
        let i = StepInputs { u: 0.7, disturbance: 0.0 };
        assert_eq!(step(&s, i, &p, 30.0), step(&s, i, &p, 30.0));
    }

    #[test]
    fn sim_time_follows_step_index() {
        let s = run([0.1, 0.0], 7, &PendulumParams::default(), 30.0);
        assert_eq!(s.step_index, 7);
        assert_eq!(s.sim_time(30.0), 7.0 / 30.0);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(7.0) - (7.0 - 2.0 * PI)).abs() < 1e-12);
        assert_eq!(wrap_angle(0.25), 0.25);
    }

    #[test]
    fn rejects_bad_params() {
        let p = PendulumParams {
            mass: 0.0,
            ..PendulumParams::default()
        };
        assert!(p.validate().is_err());
        let p = PendulumParams {
            damping: -1.0,
            ..PendulumParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn non_finite_state_is_an_error() {
        let s = EngineState::new([0.0, f64::MAX]);
        let p = PendulumParams::default();
        assert!(matches!(
            step(&s, StepInputs::default(), &p, 100.0),
            Err(EngineError::NonFinite { .. })
        ));
    }

    #[test]
    fn rod_inertia_is_a_third_of_disk() {
        let disk = PendulumParams::default();
        let rod = PendulumParams {
            model: InertiaModel::Rod,
            ..disk
        };
        assert!((disk.inertia() / rod.inertia() - 3.0).abs() < 1e-12);
    }
}
