use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::{Catalog, EdgeSpec, Endpoint, GraphError, GraphSpec, PortDecl};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Env,
    Engine,
    Node,
    Sensor,
    Actuator,
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeRole::Env => "env",
            NodeRole::Engine => "engine",
            NodeRole::Node => "node",
            NodeRole::Sensor => "sensor",
            NodeRole::Actuator => "actuator",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortRef {
    pub node: String,
    pub port: String,
}

impl PortRef {
    fn new(node: &str, port: &str) -> Self {
        PortRef {
            node: node.into(),
            port: port.into(),
        }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.node, self.port)
    }
}

/// The agnostic edge a concrete channel came from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeLabel {
    pub source: String,
    pub target: String,
    /// Touches a channel that exists only under some engines.
    pub conditional: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpec {
    pub name: String,
    /// `None` when a declared input was never connected.
    pub source: Option<PortRef>,
    /// Producer rate.
    pub rate: f64,
    pub delay: f64,
    pub window: usize,
    pub cyclic: bool,
    pub dim: usize,
    pub label: Option<EdgeLabel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub name: String,
    pub kind: String,
    pub role: NodeRole,
    /// Owning object for engine-side nodes.
    pub object: Option<String>,
    pub rate: f64,
    pub inputs: Vec<ChannelSpec>,
    pub outputs: Vec<PortDecl>,
    /// Registered state paths (`owner/state`).
    pub states: Vec<String>,
    pub params: BTreeMap<String, f64>,
}

impl NodeSpec {
    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.get(key).copied()
    }

    pub fn output_index(&self, port: &str) -> Option<usize> {
        self.outputs.iter().position(|p| p.name == port)
    }

    fn is_agnostic(&self) -> bool {
        matches!(self.role, NodeRole::Env | NodeRole::Node)
    }
}

/// A runnable graph: objects replaced by engine, sensor and actuator nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcreteGraph {
    pub name: String,
    pub engine: String,
    pub nodes: Vec<NodeSpec>,
}

fn fmt_ports(ports: &[PortDecl]) -> String {
    ports
        .iter()
        .map(|p| format!("{}:{}", p.name, p.dim))
        .collect::<Vec<_>>()
        .join(",")
}

fn fmt_params(params: &BTreeMap<String, f64>) -> String {
    params
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(",")
}

impl ConcreteGraph {
    pub fn node(&self, name: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn env(&self) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.role == NodeRole::Env)
    }

    pub fn engine_node(&self) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.role == NodeRole::Engine)
    }

    /// Every registered state path, sorted.
    pub fn states(&self) -> Vec<String> {
        let mut all: Vec<String> = self.nodes.iter().flat_map(|n| n.states.clone()).collect();
        all.sort();
        all
    }

    /// Where the delay of the edge into `target` lives: `(node, input)`.
    /// Edges into an actuator carry their delay on the engine's input from
    /// that actuator, so the held command reaches the dynamics late.
    fn delay_slot(&self, target: &str) -> Option<(usize, usize)> {
        let (n, c) = self.nodes.iter().enumerate().find_map(|(n, node)| {
            node.inputs
                .iter()
                .position(|ch| ch.label.as_ref().is_some_and(|l| l.target == target))
                .map(|c| (n, c))
        })?;
        if self.nodes[n].role != NodeRole::Actuator {
            return Some((n, c));
        }
        let actuator = &self.nodes[n].name;
        self.nodes.iter().enumerate().find_map(|(e, node)| {
            let i = node
                .inputs
                .iter()
                .position(|ch| ch.source.as_ref().is_some_and(|s| &s.node == actuator))?;
            (node.role == NodeRole::Engine).then_some((e, i))
        })
    }

    /// Sets the delay of the agnostic edge into `target`. Returns false if
    /// there is none.
    pub fn set_delay(&mut self, target: &str, delay: f64) -> bool {
        match self.delay_slot(target) {
            Some((n, c)) => {
                self.nodes[n].inputs[c].delay = delay;
                true
            }
            None => false,
        }
    }

    /// Delay of the agnostic edge into `target`.
    pub fn delay_of(&self, target: &str) -> Option<f64> {
        self.delay_slot(target).map(|(n, c)| self.nodes[n].inputs[c].delay)
    }

    /// Full structural listing with stable ordering.
    pub fn snapshot(&self) -> String {
        let mut out = format!("graph {} engine={}\n", self.name, self.engine);
        let mut nodes: Vec<&NodeSpec> = self.nodes.iter().collect();
        nodes.sort_by(|a, b| a.name.cmp(&b.name));
        for n in nodes {
            let _ = writeln!(
                out,
                "node {} role={} kind={} rate={} out=[{}] states=[{}] params=[{}]",
                n.name,
                n.role,
                n.kind,
                n.rate,
                fmt_ports(&n.outputs),
                n.states.join(","),
                fmt_params(&n.params)
            );
            for ch in &n.inputs {
                let source = ch.source.as_ref().map_or("<unconnected>".to_string(), |s| s.to_string());
                let _ = writeln!(
                    out,
                    "  in {} <- {} rate={} delay={} window={} cyclic={} dim={}",
                    ch.name, source, ch.rate, ch.delay, ch.window, ch.cyclic, ch.dim
                );
            }
        }
        out
    }

    /// Listing of the engine-independent part: environment and user nodes,
    /// the object interfaces, and every unconditional agnostic edge.
    pub fn agnostic_snapshot(&self) -> String {
        let mut lines = Vec::new();
        lines.push(format!("graph {}", self.name));
        for n in self.nodes.iter().filter(|n| n.is_agnostic()) {
            let inputs: Vec<PortDecl> = n.inputs.iter().map(|c| PortDecl::new(&c.name, c.dim)).collect();
            lines.push(format!(
                "node {} kind={} rate={} in=[{}] out=[{}] states=[{}] params=[{}]",
                n.name,
                n.kind,
                n.rate,
                fmt_ports(&inputs),
                fmt_ports(&n.outputs),
                n.states.join(","),
                fmt_params(&n.params)
            ));
        }
        for n in self.nodes.iter().filter(|n| matches!(n.role, NodeRole::Sensor | NodeRole::Actuator)) {
            let object = n.object.as_deref().unwrap_or("?");
            let channel = n.name.rsplit('/').next().unwrap_or(&n.name);
            let side = if n.role == NodeRole::Sensor { "sensors" } else { "actuators" };
            lines.push(format!(
                "interface {object}/{side}/{channel} rate={} dim={}",
                n.rate,
                n.outputs.first().map_or(0, |p| p.dim)
            ));
        }
        for ch in self.nodes.iter().flat_map(|n| &n.inputs) {
            if let Some(label) = ch.label.as_ref().filter(|l| !l.conditional) {
                let delay = self.delay_of(&label.target).unwrap_or(ch.delay);
                lines.push(format!(
                    "edge {} -> {} delay={} window={} skip={}",
                    label.source, label.target, delay, ch.window, ch.cyclic
                ));
            }
        }
        lines[1..].sort();
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}

struct Resolver<'a> {
    graph: &'a GraphSpec,
    /// Channels disabled under this engine, as endpoint paths.
    disabled: Vec<String>,
    conditional: Vec<String>,
}

impl Resolver<'_> {
    fn edge_into(&self, target: &str) -> Option<&EdgeSpec> {
        self.graph.edges.iter().find(|e| e.target == target)
    }

    fn is_disabled(&self, edge: &EdgeSpec) -> bool {
        self.disabled.contains(&edge.source) || self.disabled.contains(&edge.target)
    }

    /// Concrete producer and its rate for an agnostic source path.
    fn source(&self, path: &str) -> Option<(PortRef, f64)> {
        let endpoint: Endpoint = path.parse().ok()?;
        match endpoint {
            Endpoint::Action(a) => Some((PortRef::new("env", &a), self.graph.env_rate)),
            Endpoint::Port { node, port } => {
                let decl = self.graph.nodes.iter().find(|n| n.name == node)?;
                Some((PortRef::new(&node, &port), decl.rate))
            }
            Endpoint::Sensor { object, name } => {
                let decl = self.graph.objects.iter().find(|o| o.name == object)?;
                let sensor = decl.sensors.iter().find(|s| s.name == name)?;
                Some((PortRef::new(&format!("{object}/{name}"), "out"), sensor.rate))
            }
            _ => None,
        }
    }

    /// Channel for an input fed by the agnostic edge into `target`.
    fn channel(&self, name: &str, target: &str, dim: usize) -> ChannelSpec {
        let edge = self.edge_into(target).filter(|e| !self.is_disabled(e));
        let resolved = edge.and_then(|e| self.source(&e.source).map(|s| (e, s)));
        match resolved {
            Some((edge, (source, rate))) => ChannelSpec {
                name: name.into(),
                source: Some(source),
                rate,
                delay: edge.delay,
                window: edge.window,
                cyclic: edge.skip,
                dim,
                label: Some(EdgeLabel {
                    source: edge.source.clone(),
                    target: edge.target.clone(),
                    conditional: self.conditional.contains(&edge.source)
                        || self.conditional.contains(&edge.target),
                }),
            },
            None => ChannelSpec {
                name: name.into(),
                source: None,
                rate: 0.0,
                delay: 0.0,
                window: 1,
                cyclic: false,
                dim,
                label: None,
            },
        }
    }

    fn source_dim(&self, path: &str) -> Option<usize> {
        let endpoint: Endpoint = path.parse().ok()?;
        match endpoint {
            Endpoint::Action(a) => self.graph.actions.iter().find(|x| x.name == a).map(|x| x.dim),
            Endpoint::Port { node, port } => self
                .graph
                .nodes
                .iter()
                .find(|n| n.name == node)?
                .outputs
                .iter()
                .find(|p| p.name == port)
                .map(|p| p.dim),
            Endpoint::Sensor { object, name } => self
                .graph
                .objects
                .iter()
                .find(|o| o.name == object)?
                .sensors
                .iter()
                .find(|s| s.name == name)
                .map(|s| s.dim),
            _ => None,
        }
    }
}

/// Replaces every object with its subgraph for `engine`. The result still
/// needs `validate` before it is run.
pub fn resolve(graph: &GraphSpec, engine: &str, catalog: &Catalog) -> Result<ConcreteGraph, GraphError> {
    if !graph.objects.is_empty() && !graph.engines.contains_key(engine) {
        return Err(GraphError::UndeclaredEngine {
            engine: engine.into(),
            declared: graph.engines.keys().cloned().collect(),
        });
    }
    let mut disabled = Vec::new();
    let mut conditional = Vec::new();
    let mut bindings = Vec::new();
    for object in &graph.objects {
        let ty = catalog
            .object(&object.kind)
            .ok_or_else(|| GraphError::UnknownObjectKind {
                object: object.name.clone(),
                kind: object.kind.clone(),
            })?;
        let binding = ty.engines.get(engine).ok_or_else(|| GraphError::UnsupportedEngine {
            object: object.name.clone(),
            engine: engine.into(),
            available: ty.engines.keys().cloned().collect(),
        })?;
        let mismatch = |channel: &str, reason: String| GraphError::ChannelMismatch {
            object: object.name.clone(),
            engine: engine.into(),
            channel: channel.into(),
            reason,
        };
        for (side, decls) in [("sensors", &object.sensors), ("actuators", &object.actuators)] {
            for decl in decls {
                let path = format!("{}/{side}/{}", object.name, decl.name);
                if !decl.engines.is_empty() {
                    conditional.push(path.clone());
                }
                if !decl.enabled_for(engine) {
                    disabled.push(path);
                    continue;
                }
                let provided = if side == "sensors" {
                    binding.sensors.iter().find(|s| s.name == decl.name).map(|s| s.dim)
                } else {
                    binding.actuators.iter().find(|a| a.name == decl.name).map(|a| a.dim)
                };
                match provided {
                    None => return Err(mismatch(&decl.name, "is not provided".into())),
                    Some(dim) if dim != decl.dim => {
                        return Err(mismatch(&decl.name, format!("has dimension {dim}, declared {}", decl.dim)))
                    }
                    Some(_) => {}
                }
            }
        }
        bindings.push((object, binding));
    }

    let r = Resolver {
        graph,
        disabled,
        conditional,
    };
    let mut nodes = Vec::new();

    if !graph.actions.is_empty() || !graph.observations.is_empty() {
        let inputs = graph
            .observations
            .iter()
            .map(|o| {
                let target = format!("observation/{o}");
                let dim = r
                    .edge_into(&target)
                    .and_then(|e| r.source_dim(&e.source))
                    .unwrap_or(1);
                r.channel(o, &target, dim)
            })
            .collect();
        nodes.push(NodeSpec {
            name: "env".into(),
            kind: "env".into(),
            role: NodeRole::Env,
            object: None,
            rate: graph.env_rate,
            inputs,
            outputs: graph.actions.clone(),
            states: Vec::new(),
            params: BTreeMap::new(),
        });
    }

    for decl in &graph.nodes {
        nodes.push(NodeSpec {
            name: decl.name.clone(),
            kind: decl.kind.clone(),
            role: NodeRole::Node,
            object: None,
            rate: decl.rate,
            inputs: decl
                .inputs
                .iter()
                .map(|p| r.channel(&p.name, &format!("{}/{}", decl.name, p.name), p.dim))
                .collect(),
            outputs: decl.outputs.clone(),
            states: decl.states.iter().map(|s| format!("{}/{s}", decl.name)).collect(),
            params: decl.params.clone(),
        });
    }

    if !bindings.is_empty() {
        let engine_decl = graph.engines.get(engine).ok_or_else(|| GraphError::UndeclaredEngine {
            engine: engine.into(),
            declared: graph.engines.keys().cloned().collect(),
        })?;
        let kind = catalog.engine_kind(engine).ok_or_else(|| GraphError::UnsupportedEngine {
            object: bindings[0].0.name.clone(),
            engine: engine.into(),
            available: catalog.engines().map(String::from).collect(),
        })?;
        let mut engine_node = NodeSpec {
            name: "engine".into(),
            kind: kind.into(),
            role: NodeRole::Engine,
            object: None,
            rate: engine_decl.rate,
            inputs: Vec::new(),
            outputs: Vec::new(),
            states: Vec::new(),
            params: engine_decl.params.clone(),
        };
        let mut object_nodes = Vec::new();
        for (object, binding) in &bindings {
            let o = &object.name;
            engine_node.outputs.push(PortDecl::new(&format!("{o}/state"), binding.state_dim));
            engine_node
                .states
                .extend(binding.states.iter().map(|s| format!("{o}/{s}")));
            engine_node
                .params
                .extend(object.params.iter().map(|(k, v)| (format!("{o}/{k}"), *v)));
            for act in object.actuators.iter().filter(|a| a.enabled_for(engine)) {
                let name = format!("{o}/{}", act.name);
                let mut feed = r.channel("in", &format!("{o}/actuators/{}", act.name), act.dim);
                let delay = std::mem::take(&mut feed.delay);
                engine_node.inputs.push(ChannelSpec {
                    name: name.clone(),
                    source: Some(PortRef::new(&name, "out")),
                    rate: act.rate,
                    delay,
                    window: 1,
                    cyclic: object.skip_engine_inputs,
                    dim: act.dim,
                    label: None,
                });
                object_nodes.push(NodeSpec {
                    name,
                    kind: "hold".into(),
                    role: NodeRole::Actuator,
                    object: Some(o.clone()),
                    rate: act.rate,
                    inputs: vec![feed],
                    outputs: vec![PortDecl::new("out", act.dim)],
                    states: Vec::new(),
                    params: BTreeMap::new(),
                });
            }
            for sensor in object.sensors.iter().filter(|s| s.enabled_for(engine)) {
                let bound = binding
                    .sensors
                    .iter()
                    .find(|s| s.name == sensor.name)
                    .expect("checked above");
                object_nodes.push(NodeSpec {
                    name: format!("{o}/{}", sensor.name),
                    kind: "sensor".into(),
                    role: NodeRole::Sensor,
                    object: Some(o.clone()),
                    rate: sensor.rate,
                    inputs: vec![ChannelSpec {
                        name: "state".into(),
                        source: Some(PortRef::new("engine", &format!("{o}/state"))),
                        rate: engine_decl.rate,
                        delay: 0.0,
                        window: 1,
                        cyclic: false,
                        dim: binding.state_dim,
                        label: None,
                    }],
                    outputs: vec![PortDecl::new("out", sensor.dim)],
                    states: Vec::new(),
                    params: BTreeMap::from([
                        ("index".into(), bound.index as f64),
                        ("wrap".into(), if bound.wrap { 1.0 } else { 0.0 }),
                    ]),
                });
            }
        }
        nodes.push(engine_node);
        nodes.extend(object_nodes);
    }

    Ok(ConcreteGraph {
        name: graph.name.clone(),
        engine: engine.into(),
        nodes,
    })
}
