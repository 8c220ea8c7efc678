//! Node kinds available to graphs and the step that turns a concrete graph
//! into wired runtimes.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::engine::{wrap_angle, CounterEngine, OdeEngine};
use crate::executor::Wiring;
use crate::graph::{validate, ConcreteGraph, Diagnostic, NodeRole, NodeSpec};
use crate::node::{CallbackContext, InputPort, NodeBehavior, NodeError, NodeRuntime, OutputPort, StateValues};
use crate::protocol::{ChannelTiming, ProtocolError, Rate};
use crate::transport::{ChannelEndpoint, ConsumerRef, Payload};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuildError {
    #[error("node {node:?}: no behavior registered for kind {kind:?}")]
    UnknownKind { node: String, kind: String },
    #[error("node {node:?}: parameter {key:?}: {reason}")]
    Param { node: String, key: String, reason: String },
    #[error("graph is not runnable: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
    #[error("node {node:?} input {input:?}: {error}")]
    Protocol {
        node: String,
        input: String,
        error: ProtocolError,
    },
    #[error("node {node:?}: {error}")]
    Reset { node: String, error: NodeError },
}

impl BuildError {
    pub fn param(spec: &NodeSpec, key: &str, reason: &str) -> Self {
        BuildError::Param {
            node: spec.name.clone(),
            key: key.into(),
            reason: reason.into(),
        }
    }
}

pub type Factory = Arc<dyn Fn(&NodeSpec) -> Result<Box<dyn NodeBehavior>, BuildError> + Send + Sync>;

/// Maps node kinds to behavior factories.
#[derive(Clone, Default)]
pub struct NodeRegistry {
    factories: BTreeMap<String, Factory>,
}

impl NodeRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Built-in kinds: `lowpass`, `mix`, `relay`, `hold`, `sensor`, `pd`,
    /// `ode_engine`, `counter_engine`.
    pub fn standard() -> Self {
        let mut r = NodeRegistry::empty();
        r.register("lowpass", |s| Ok(Box::new(LowPass::from_spec(s)?)));
        r.register("mix", |s| Ok(Box::new(Mix::from_spec(s))));
        r.register("relay", |s| Ok(Box::new(Relay::from_spec(s)?)));
        r.register("hold", |s| Ok(Box::new(Relay::from_spec(s)?)));
        r.register("sensor", |s| Ok(Box::new(Sensor::from_spec(s)?)));
        r.register("pd", |s| Ok(Box::new(Pd::from_spec(s)?)));
        r.register("ode_engine", |s| Ok(Box::new(OdeEngine::from_spec(s)?)));
        r.register("counter_engine", |s| Ok(Box::new(CounterEngine::from_spec(s)?)));
        r
    }

    pub fn register<F>(&mut self, kind: &str, factory: F)
    where
        F: Fn(&NodeSpec) -> Result<Box<dyn NodeBehavior>, BuildError> + Send + Sync + 'static,
    {
        self.factories.insert(kind.into(), Arc::new(factory));
    }

    pub fn build(&self, spec: &NodeSpec) -> Result<Box<dyn NodeBehavior>, BuildError> {
        let factory = self.factories.get(&spec.kind).ok_or_else(|| BuildError::UnknownKind {
            node: spec.name.clone(),
            kind: spec.kind.clone(),
        })?;
        factory(spec)
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }
}

/// Validates `graph` and instantiates one reset runtime per node, wired
/// producer to consumer. Engines are throttled; `cost_ms` params become
/// injected callback cost.
pub fn build_wiring(graph: &ConcreteGraph, registry: &NodeRegistry) -> Result<Wiring, BuildError> {
    let errors: Vec<Diagnostic> = validate(graph).into_iter().filter(Diagnostic::is_error).collect();
    if !errors.is_empty() {
        return Err(BuildError::Invalid(errors));
    }
    let index: BTreeMap<&str, usize> = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.name.as_str(), i))
        .collect();
    let mut endpoints: Vec<Vec<ChannelEndpoint>> = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| {
            (0..n.outputs.len())
                .map(|o| ChannelEndpoint {
                    node: i,
                    output: o,
                    consumers: Vec::new(),
                })
                .collect()
        })
        .collect();

    let mut nodes = Vec::with_capacity(graph.nodes.len());
    for (i, spec) in graph.nodes.iter().enumerate() {
        let rate = Rate::new(spec.rate).map_err(|error| BuildError::Protocol {
            node: spec.name.clone(),
            input: String::new(),
            error,
        })?;
        let mut inputs = Vec::with_capacity(spec.inputs.len());
        for (j, ch) in spec.inputs.iter().enumerate() {
            let protocol = |error| BuildError::Protocol {
                node: spec.name.clone(),
                input: ch.name.clone(),
                error,
            };
            let source = ch.source.as_ref().expect("validated");
            let p = index[source.node.as_str()];
            let o = graph.nodes[p].output_index(&source.port).expect("validated");
            endpoints[p][o].consumers.push(ConsumerRef {
                node: i,
                input: j,
                delay: ch.delay,
            });
            let timing = ChannelTiming::new(rate, Rate::new(ch.rate).map_err(protocol)?, ch.delay, ch.cyclic)
                .map_err(protocol)?;
            inputs.push(InputPort {
                name: ch.name.clone(),
                timing,
                window: ch.window,
                dim: ch.dim,
            });
        }
        let outputs = spec
            .outputs
            .iter()
            .map(|p| OutputPort {
                name: p.name.clone(),
                dim: p.dim,
            })
            .collect();
        let behavior = registry.build(spec)?;
        let mut rt = NodeRuntime::new(&spec.name, rate, inputs, outputs, spec.states.clone(), behavior);
        rt.reset_node(&StateValues::new()).map_err(|error| BuildError::Reset {
            node: spec.name.clone(),
            error,
        })?;
        nodes.push(rt);
    }
    let throttled = graph.nodes.iter().map(|n| n.role == NodeRole::Engine).collect();
    let costs = graph
        .nodes
        .iter()
        .map(|n| Duration::from_secs_f64(n.param("cost_ms").unwrap_or(0.0).max(0.0) / 1000.0))
        .collect();
    Ok(Wiring {
        nodes,
        endpoints,
        throttled,
        costs,
    })
}

fn require_input(spec: &NodeSpec) -> Result<usize, BuildError> {
    spec.inputs
        .first()
        .map(|c| c.dim)
        .ok_or_else(|| BuildError::param(spec, "inputs", "needs at least one input"))
}

/// First-order low-pass filter on its first input.
struct LowPass {
    key: String,
    default_cutoff: f64,
    rate: f64,
    alpha: f64,
    y: Vec<f64>,
}

impl LowPass {
    fn from_spec(spec: &NodeSpec) -> Result<Self, BuildError> {
        let dim = require_input(spec)?;
        if spec.outputs.len() != 1 || spec.outputs[0].dim != dim {
            return Err(BuildError::param(spec, "outputs", "needs one output matching the input dimension"));
        }
        let cutoff = spec
            .param("cutoff")
            .ok_or_else(|| BuildError::param(spec, "cutoff", "required"))?;
        let mut f = LowPass {
            key: format!("{}/cutoff", spec.name),
            default_cutoff: cutoff,
            rate: spec.rate,
            alpha: 0.0,
            y: vec![0.0; dim],
        };
        f.alpha = f.alpha_for(cutoff).map_err(|e| BuildError::param(spec, "cutoff", &e.to_string()))?;
        Ok(f)
    }

    fn alpha_for(&self, cutoff: f64) -> Result<f64, NodeError> {
        if !(cutoff.is_finite() && cutoff > 0.0) {
            return Err(NodeError::InvalidState {
                key: self.key.clone(),
                value: cutoff,
                reason: "cutoff must be positive".into(),
            });
        }
        Ok(1.0 - (-2.0 * PI * cutoff / self.rate).exp())
    }
}

impl NodeBehavior for LowPass {
    fn reset(&mut self, states: &StateValues) -> Result<(), NodeError> {
        let cutoff = states.get(&self.key).copied().unwrap_or(self.default_cutoff);
        self.alpha = self.alpha_for(cutoff)?;
        self.y.iter_mut().for_each(|v| *v = 0.0);
        Ok(())
    }

    fn callback(&mut self, ctx: &CallbackContext<'_>) -> Result<Vec<Payload>, NodeError> {
        let u = ctx.inputs[0].latest();
        for (y, u) in self.y.iter_mut().zip(u.iter()) {
            *y += self.alpha * (u - *y);
        }
        Ok(vec![Payload::new(self.y.clone())])
    }
}

/// Fills every output with the mean of its inputs' latest first components.
struct Mix {
    dims: Vec<usize>,
}

impl Mix {
    fn from_spec(spec: &NodeSpec) -> Self {
        Mix {
            dims: spec.outputs.iter().map(|p| p.dim).collect(),
        }
    }
}

impl NodeBehavior for Mix {
    fn callback(&mut self, ctx: &CallbackContext<'_>) -> Result<Vec<Payload>, NodeError> {
        let n = ctx.inputs.len().max(1) as f64;
        let mean = ctx.inputs.iter().map(|i| i.latest().first()).sum::<f64>() / n;
        Ok(self.dims.iter().map(|&d| Payload::new(vec![mean; d])).collect())
    }
}

/// Republishes the latest value of its first input. Used for actuators,
/// where it realizes the zero-order hold.
struct Relay;

impl Relay {
    fn from_spec(spec: &NodeSpec) -> Result<Self, BuildError> {
        let dim = require_input(spec)?;
        if spec.outputs.len() != 1 || spec.outputs[0].dim != dim {
            return Err(BuildError::param(spec, "outputs", "needs one output matching the input dimension"));
        }
        Ok(Relay)
    }
}

impl NodeBehavior for Relay {
    fn callback(&mut self, ctx: &CallbackContext<'_>) -> Result<Vec<Payload>, NodeError> {
        Ok(vec![ctx.inputs[0].latest().clone()])
    }
}

/// Reads a slice of the engine state, optionally wrapping it as an angle.
struct Sensor {
    index: usize,
    dim: usize,
    wrap: bool,
}

impl Sensor {
    fn from_spec(spec: &NodeSpec) -> Result<Self, BuildError> {
        let state_dim = require_input(spec)?;
        let index = spec.param("index").unwrap_or(0.0) as usize;
        let dim = spec.outputs.first().map_or(0, |p| p.dim);
        if spec.outputs.len() != 1 || index + dim > state_dim {
            return Err(BuildError::param(spec, "index", "sensor slice exceeds the engine state"));
        }
        Ok(Sensor {
            index,
            dim,
            wrap: spec.param("wrap").unwrap_or(0.0) != 0.0,
        })
    }
}

impl NodeBehavior for Sensor {
    fn callback(&mut self, ctx: &CallbackContext<'_>) -> Result<Vec<Payload>, NodeError> {
        let state = ctx.inputs[0].latest();
        let values = state[self.index..self.index + self.dim]
            .iter()
            .map(|&v| if self.wrap { wrap_angle(v) } else { v })
            .collect();
        Ok(vec![Payload::new(values)])
    }
}

/// Saturated PD controller on inputs `theta` and `thetadot`.
struct Pd {
    theta: usize,
    thetadot: usize,
    kp: f64,
    kd: f64,
    target: f64,
    limit: f64,
}

impl Pd {
    fn from_spec(spec: &NodeSpec) -> Result<Self, BuildError> {
        let input = |name: &str| {
            spec.inputs
                .iter()
                .position(|c| c.name == name)
                .ok_or_else(|| BuildError::param(spec, name, "input required"))
        };
        Ok(Pd {
            theta: input("theta")?,
            thetadot: input("thetadot")?,
            kp: spec.param("kp").unwrap_or(1.0),
            kd: spec.param("kd").unwrap_or(0.1),
            target: spec.param("target").unwrap_or(0.0),
            limit: spec.param("limit").unwrap_or(2.0),
        })
    }
}

impl NodeBehavior for Pd {
    fn callback(&mut self, ctx: &CallbackContext<'_>) -> Result<Vec<Payload>, NodeError> {
        let error = wrap_angle(ctx.inputs[self.theta].latest().first() - self.target);
        let rate = ctx.inputs[self.thetadot].latest().first();
        let u = (-self.kp * error - self.kd * rate).clamp(-self.limit, self.limit);
        Ok(vec![Payload::scalar(u)])
    }
}
