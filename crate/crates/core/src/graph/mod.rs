//! Engine-agnostic graphs: nodes, objects, actions and observations joined
//! by edges carrying delay, window and skip attributes.

mod catalog;
mod resolve;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use petgraph::algo::astar;
use petgraph::graphmap::DiGraphMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use catalog::{Catalog, EngineBinding, ObjectType, SensorBinding};
pub use resolve::{resolve, ChannelSpec, ConcreteGraph, EdgeLabel, NodeRole, NodeSpec, PortRef};
pub use validate::{validate, DiagCode, Diagnostic, Severity};

pub const SCHEMA_VERSION: u32 = 1;

/// Names with special meaning in endpoint paths or resolved graphs.
pub const RESERVED_NAMES: [&str; 4] = ["action", "observation", "env", "engine"];

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn is_one(v: &usize) -> bool {
    *v == 1
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

fn is_false(v: &bool) -> bool {
    !*v
}

fn is_true(v: &bool) -> bool {
    *v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortDecl {
    pub name: String,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub dim: usize,
}

impl PortDecl {
    pub fn new(name: &str, dim: usize) -> Self {
        PortDecl {
            name: name.into(),
            dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDecl {
    pub name: String,
    pub kind: String,
    pub rate: f64,
    #[serde(default)]
    pub inputs: Vec<PortDecl>,
    #[serde(default)]
    pub outputs: Vec<PortDecl>,
    /// Parameters that may be overridden per episode, by short name.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

impl NodeDecl {
    pub fn new(name: &str, kind: &str, rate: f64) -> Self {
        NodeDecl {
            name: name.into(),
            kind: kind.into(),
            rate,
            inputs: Vec::new(),
            outputs: Vec::new(),
            states: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn input(mut self, name: &str, dim: usize) -> Self {
        self.inputs.push(PortDecl::new(name, dim));
        self
    }

    pub fn output(mut self, name: &str, dim: usize) -> Self {
        self.outputs.push(PortDecl::new(name, dim));
        self
    }

    pub fn param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.into(), value);
        self
    }

    pub fn state(mut self, name: &str) -> Self {
        self.states.push(name.into());
        self
    }
}

/// An object sensor or actuator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelDecl {
    pub name: String,
    pub rate: f64,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub dim: usize,
    /// Engines under which the channel exists. Empty means all.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub engines: Vec<String>,
}

impl ChannelDecl {
    pub fn new(name: &str, rate: f64) -> Self {
        ChannelDecl {
            name: name.into(),
            rate,
            dim: 1,
            engines: Vec::new(),
        }
    }

    pub fn enabled_for(&self, engine: &str) -> bool {
        self.engines.is_empty() || self.engines.iter().any(|e| e == engine)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectDecl {
    pub name: String,
    pub kind: String,
    #[serde(default)]
    pub sensors: Vec<ChannelDecl>,
    #[serde(default)]
    pub actuators: Vec<ChannelDecl>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    /// Whether the engine reads this object's actuators over cyclic
    /// channels. When false, some other edge in the loop must skip.
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub skip_engine_inputs: bool,
}

impl ObjectDecl {
    pub fn new(name: &str, kind: &str) -> Self {
        ObjectDecl {
            name: name.into(),
            kind: kind.into(),
            sensors: Vec::new(),
            actuators: Vec::new(),
            params: BTreeMap::new(),
            skip_engine_inputs: true,
        }
    }

    pub fn sensor(mut self, channel: ChannelDecl) -> Self {
        self.sensors.push(channel);
        self
    }

    pub fn actuator(mut self, channel: ChannelDecl) -> Self {
        self.actuators.push(channel);
        self
    }

    pub fn param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.into(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineDecl {
    pub rate: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub source: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub delay: f64,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub window: usize,
    #[serde(default, skip_serializing_if = "is_false")]
    pub skip: bool,
}

impl EdgeSpec {
    pub fn new(source: &str, target: &str) -> Self {
        EdgeSpec {
            source: source.into(),
            target: target.into(),
            delay: 0.0,
            window: 1,
            skip: false,
        }
    }

    pub fn delay(mut self, delay: f64) -> Self {
        self.delay = delay;
        self
    }

    pub fn window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }

    pub fn skip(mut self) -> Self {
        self.skip = true;
        self
    }
}

/// A parsed endpoint path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Endpoint {
    /// `action/<name>`
    Action(String),
    /// `observation/<name>`
    Observation(String),
    /// `<node>/<port>`
    Port { node: String, port: String },
    /// `<object>/sensors/<name>`
    Sensor { object: String, name: String },
    /// `<object>/actuators/<name>`
    Actuator { object: String, name: String },
}

impl FromStr for Endpoint {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, GraphError> {
        let parts: Vec<&str> = s.split('/').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(GraphError::UnknownEndpoint(s.into()));
        }
        Ok(match parts.as_slice() {
            ["action", name] => Endpoint::Action(name.to_string()),
            ["observation", name] => Endpoint::Observation(name.to_string()),
            [object, "sensors", name] => Endpoint::Sensor {
                object: object.to_string(),
                name: name.to_string(),
            },
            [object, "actuators", name] => Endpoint::Actuator {
                object: object.to_string(),
                name: name.to_string(),
            },
            [node, port] => Endpoint::Port {
                node: node.to_string(),
                port: port.to_string(),
            },
            _ => return Err(GraphError::UnknownEndpoint(s.into())),
        })
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Action(n) => write!(f, "action/{n}"),
            Endpoint::Observation(n) => write!(f, "observation/{n}"),
            Endpoint::Port { node, port } => write!(f, "{node}/{port}"),
            Endpoint::Sensor { object, name } => write!(f, "{object}/sensors/{name}"),
            Endpoint::Actuator { object, name } => write!(f, "{object}/actuators/{name}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("unknown endpoint {0:?}")]
    UnknownEndpoint(String),
    #[error("{0:?} cannot be an edge source")]
    NotASource(String),
    #[error("{0:?} cannot be an edge target")]
    NotATarget(String),
    #[error("type mismatch: {from} has dimension {source_dim}, {to} expects {target_dim}")]
    TypeMismatch {
        from: String,
        to: String,
        source_dim: usize,
        target_dim: usize,
    },
    #[error("duplicate edge {from} -> {to}")]
    DuplicateEdge { from: String, to: String },
    #[error("{target} is already fed by {existing}")]
    TargetConnected { target: String, existing: String },
    #[error("edge {from} -> {to} closes a cycle with no skip edge ({}); set skip=true on one edge", cycle.join(" -> "))]
    CycleWithoutSkip {
        from: String,
        to: String,
        cycle: Vec<String>,
    },
    #[error("edge {from} -> {to}: {reason}")]
    InvalidEdge {
        from: String,
        to: String,
        reason: String,
    },
    #[error("duplicate name {0:?}")]
    DuplicateName(String),
    #[error("{0:?} is reserved")]
    ReservedName(String),
    #[error("invalid name {0:?}: use letters, digits, '_' or '-'")]
    InvalidName(String),
    #[error("{what} has invalid rate {rate}")]
    InvalidRate { what: String, rate: f64 },
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    UnsupportedVersion(u32),
    #[error("cannot parse graph file: {0}")]
    Parse(String),
    #[error("graph file i/o: {0}")]
    Io(String),
    #[error("object {object:?} does not support engine {engine:?}; available: {}", available.join(", "))]
    UnsupportedEngine {
        object: String,
        engine: String,
        available: Vec<String>,
    },
    #[error("graph declares no engine {engine:?}; declared: {}", declared.join(", "))]
    UndeclaredEngine { engine: String, declared: Vec<String> },
    #[error("unknown object kind {kind:?} for object {object:?}")]
    UnknownObjectKind { object: String, kind: String },
    #[error("object {object:?} under engine {engine:?}: channel {channel:?} {reason}")]
    ChannelMismatch {
        object: String,
        engine: String,
        channel: String,
        reason: String,
    },
}

fn check_name(name: &str) -> Result<(), GraphError> {
    if RESERVED_NAMES.contains(&name) {
        return Err(GraphError::ReservedName(name.into()));
    }
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(GraphError::InvalidName(name.into()));
    }
    Ok(())
}

fn check_rate(what: &str, rate: f64) -> Result<(), GraphError> {
    if rate.is_finite() && rate > 0.0 {
        Ok(())
    } else {
        Err(GraphError::InvalidRate {
            what: what.into(),
            rate,
        })
    }
}

/// The engine-agnostic graph. Built in code or loaded from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub version: u32,
    pub name: String,
    pub env_rate: f64,
    #[serde(default)]
    pub actions: Vec<PortDecl>,
    #[serde(default)]
    pub observations: Vec<String>,
    #[serde(default)]
    pub nodes: Vec<NodeDecl>,
    #[serde(default)]
    pub objects: Vec<ObjectDecl>,
    #[serde(default)]
    pub engines: BTreeMap<String, EngineDecl>,
    #[serde(default)]
    pub edges: Vec<EdgeSpec>,
}

/// Resolved facts about one end of an edge.
#[derive(Debug, Clone, Copy, PartialEq)]
struct SourceInfo {
    rate: f64,
    dim: usize,
}

/// Vertex of the agnostic dependency graph used for cycle checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Vertex<'a> {
    Env,
    Node(&'a str),
    ObjectIn(&'a str),
    ObjectOut(&'a str),
}

impl fmt::Display for Vertex<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Vertex::Env => f.write_str("env"),
            Vertex::Node(n) => f.write_str(n),
            Vertex::ObjectIn(o) | Vertex::ObjectOut(o) => f.write_str(o),
        }
    }
}

impl GraphSpec {
    pub fn new(name: &str, env_rate: f64) -> Self {
        GraphSpec {
            version: SCHEMA_VERSION,
            name: name.into(),
            env_rate,
            actions: Vec::new(),
            observations: Vec::new(),
            nodes: Vec::new(),
            objects: Vec::new(),
            engines: BTreeMap::new(),
            edges: Vec::new(),
        }
    }

    fn name_taken(&self, name: &str) -> bool {
        self.nodes.iter().any(|n| n.name == name) || self.objects.iter().any(|o| o.name == name)
    }

    pub fn add_action(&mut self, name: &str, dim: usize) -> Result<(), GraphError> {
        check_name(name)?;
        if self.actions.iter().any(|a| a.name == name) {
            return Err(GraphError::DuplicateName(format!("action/{name}")));
        }
        self.actions.push(PortDecl::new(name, dim));
        Ok(())
    }

    pub fn add_observation(&mut self, name: &str) -> Result<(), GraphError> {
        check_name(name)?;
        if self.observations.iter().any(|o| o == name) {
            return Err(GraphError::DuplicateName(format!("observation/{name}")));
        }
        self.observations.push(name.into());
        Ok(())
    }

    pub fn add_node(&mut self, node: NodeDecl) -> Result<(), GraphError> {
        check_name(&node.name)?;
        check_rate(&node.name, node.rate)?;
        if self.name_taken(&node.name) {
            return Err(GraphError::DuplicateName(node.name));
        }
        let mut ports = BTreeSet::new();
        for port in node.inputs.iter().chain(&node.outputs) {
            check_name(&port.name)?;
            if !ports.insert(port.name.as_str()) {
                return Err(GraphError::DuplicateName(format!("{}/{}", node.name, port.name)));
            }
        }
        self.nodes.push(node);
        Ok(())
    }

    pub fn add_object(&mut self, object: ObjectDecl) -> Result<(), GraphError> {
        check_name(&object.name)?;
        if self.name_taken(&object.name) {
            return Err(GraphError::DuplicateName(object.name));
        }
        for channel in object.sensors.iter().chain(&object.actuators) {
            check_name(&channel.name)?;
            check_rate(&format!("{}/{}", object.name, channel.name), channel.rate)?;
        }
        self.objects.push(object);
        Ok(())
    }

    pub fn add_engine(&mut self, id: &str, engine: EngineDecl) -> Result<(), GraphError> {
        check_rate(&format!("engine {id}"), engine.rate)?;
        if self.engines.insert(id.into(), engine).is_some() {
            return Err(GraphError::DuplicateName(format!("engine {id}")));
        }
        Ok(())
    }

    /// Shorthand for `add_node` that also returns `self` for chaining.
    pub fn with_node(mut self, node: NodeDecl) -> Result<Self, GraphError> {
        self.add_node(node)?;
        Ok(self)
    }

    fn object(&self, name: &str) -> Option<&ObjectDecl> {
        self.objects.iter().find(|o| o.name == name)
    }

    fn node(&self, name: &str) -> Option<&NodeDecl> {
        self.nodes.iter().find(|n| n.name == name)
    }

    fn source_info(&self, raw: &str, endpoint: &Endpoint) -> Result<SourceInfo, GraphError> {
        let unknown = || GraphError::UnknownEndpoint(raw.into());
        match endpoint {
            Endpoint::Action(name) => self
                .actions
                .iter()
                .find(|a| &a.name == name)
                .map(|a| SourceInfo {
                    rate: self.env_rate,
                    dim: a.dim,
                })
                .ok_or_else(unknown),
            Endpoint::Port { node, port } => {
                let decl = self.node(node).ok_or_else(unknown)?;
                if decl.inputs.iter().any(|p| &p.name == port) {
                    return Err(GraphError::NotASource(raw.into()));
                }
                decl.outputs
                    .iter()
                    .find(|p| &p.name == port)
                    .map(|p| SourceInfo {
                        rate: decl.rate,
                        dim: p.dim,
                    })
                    .ok_or_else(unknown)
            }
            Endpoint::Sensor { object, name } => self
                .object(object)
                .and_then(|o| o.sensors.iter().find(|s| &s.name == name))
                .map(|s| SourceInfo {
                    rate: s.rate,
                    dim: s.dim,
                })
                .ok_or_else(unknown),
            Endpoint::Observation(_) | Endpoint::Actuator { .. } => {
                Err(GraphError::NotASource(raw.into()))
            }
        }
    }

    /// Dimension expected by a target, or `None` when it takes the source's
    /// (observations).
    fn target_dim(&self, raw: &str, endpoint: &Endpoint) -> Result<Option<usize>, GraphError> {
        let unknown = || GraphError::UnknownEndpoint(raw.into());
        match endpoint {
            Endpoint::Observation(name) => {
                if self.observations.contains(name) {
                    Ok(None)
                } else {
                    Err(unknown())
                }
            }
            Endpoint::Port { node, port } => {
                let decl = self.node(node).ok_or_else(unknown)?;
                if decl.outputs.iter().any(|p| &p.name == port) {
                    return Err(GraphError::NotATarget(raw.into()));
                }
                decl.inputs
                    .iter()
                    .find(|p| &p.name == port)
                    .map(|p| Some(p.dim))
                    .ok_or_else(unknown)
            }
            Endpoint::Actuator { object, name } => self
                .object(object)
                .and_then(|o| o.actuators.iter().find(|a| &a.name == name))
                .map(|a| Some(a.dim))
                .ok_or_else(unknown),
            Endpoint::Action(_) | Endpoint::Sensor { .. } => Err(GraphError::NotATarget(raw.into())),
        }
    }

    // An object whose engine inputs skip splits into an input sink and an
    // output source, so no cycle passes through it. Otherwise both sides
    // share one vertex and dependencies pass straight through.
    fn source_vertex<'a>(&'a self, endpoint: &'a Endpoint) -> Vertex<'a> {
        match endpoint {
            Endpoint::Action(_) | Endpoint::Observation(_) => Vertex::Env,
            Endpoint::Port { node, .. } => Vertex::Node(node),
            Endpoint::Sensor { object, .. } | Endpoint::Actuator { object, .. } => {
                match self.object(object) {
                    Some(o) if !o.skip_engine_inputs => Vertex::ObjectIn(object),
                    _ => Vertex::ObjectOut(object),
                }
            }
        }
    }

    fn target_vertex<'a>(&'a self, endpoint: &'a Endpoint) -> Vertex<'a> {
        match endpoint {
            Endpoint::Sensor { object, .. } | Endpoint::Actuator { object, .. } => {
                Vertex::ObjectIn(object)
            }
            other => self.source_vertex(other),
        }
    }

    /// Adds an edge after checking endpoints, types, duplicates and that
    /// every dependency cycle keeps at least one skip edge.
    pub fn connect(&mut self, edge: EdgeSpec) -> Result<(), GraphError> {
        let source: Endpoint = edge.source.parse()?;
        let target: Endpoint = edge.target.parse()?;
        let invalid = |reason: String| GraphError::InvalidEdge {
            from: edge.source.clone(),
            to: edge.target.clone(),
            reason,
        };
        if !(edge.delay.is_finite() && edge.delay >= 0.0) {
            return Err(invalid(format!("delay must be finite and non-negative, got {}", edge.delay)));
        }
        if edge.window == 0 {
            return Err(invalid("window must be at least 1".into()));
        }
        let info = self.source_info(&edge.source, &source)?;
        let target_dim = self.target_dim(&edge.target, &target)?;
        if let Some(dim) = target_dim {
            if dim != info.dim {
                return Err(GraphError::TypeMismatch {
                    from: edge.source.clone(),
                    to: edge.target.clone(),
                    source_dim: info.dim,
                    target_dim: dim,
                });
            }
        }
        for existing in &self.edges {
            if existing.source == edge.source && existing.target == edge.target {
                return Err(GraphError::DuplicateEdge {
                    from: edge.source.clone(),
                    to: edge.target.clone(),
                });
            }
            if existing.target == edge.target {
                return Err(GraphError::TargetConnected {
                    target: edge.target.clone(),
                    existing: existing.source.clone(),
                });
            }
        }
        if !edge.skip {
            if let Some(cycle) = self.cycle_through(&source, &target) {
                return Err(GraphError::CycleWithoutSkip {
                    from: edge.source.clone(),
                    to: edge.target.clone(),
                    cycle,
                });
            }
        }
        self.edges.push(edge);
        Ok(())
    }

    /// If adding a non-skip edge `source -> target` closes a cycle of
    /// non-skip edges, returns the vertices on it.
    fn cycle_through(&self, source: &Endpoint, target: &Endpoint) -> Option<Vec<String>> {
        let parsed: Vec<(Endpoint, Endpoint)> = self
            .edges
            .iter()
            .filter(|e| !e.skip)
            .filter_map(|e| Some((e.source.parse().ok()?, e.target.parse().ok()?)))
            .collect();
        let mut g: DiGraphMap<Vertex<'_>, ()> = DiGraphMap::new();
        for (s, t) in &parsed {
            g.add_edge(self.source_vertex(s), self.target_vertex(t), ());
        }
        let from = self.source_vertex(source);
        let to = self.target_vertex(target);
        if from == to {
            return Some(vec![from.to_string(), to.to_string()]);
        }
        g.add_node(from);
        g.add_node(to);
        let (_, path) = astar(&g, to, |v| v == from, |_| 1, |_| 0)?;
        let mut cycle: Vec<String> = std::iter::once(from)
            .chain(path)
            .map(|v| v.to_string())
            .collect();
        cycle.dedup();
        Some(cycle)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("graph specs are always serializable")
    }

    /// Parses a graph file and re-applies every edge through `connect`, so
    /// a loaded graph obeys the same rules as one built in code.
    pub fn from_toml(text: &str) -> Result<GraphSpec, GraphError> {
        let raw: GraphSpec = toml::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
        if raw.version != SCHEMA_VERSION {
            return Err(GraphError::UnsupportedVersion(raw.version));
        }
        check_rate("env", raw.env_rate)?;
        let mut graph = GraphSpec::new(&raw.name, raw.env_rate);
        for a in raw.actions {
            graph.add_action(&a.name, a.dim)?;
        }
        for o in raw.observations {
            graph.add_observation(&o)?;
        }
        for n in raw.nodes {
            graph.add_node(n)?;
        }
        for o in raw.objects {
            graph.add_object(o)?;
        }
        for (id, e) in raw.engines {
            graph.add_engine(&id, e)?;
        }
        for e in raw.edges {
            graph.connect(e)?;
        }
        Ok(graph)
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        std::fs::write(path, self.to_toml()).map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<GraphSpec, GraphError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))?;
        GraphSpec::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_nodes() -> GraphSpec {
        let mut g = GraphSpec::new("t", 20.0);
        g.add_node(NodeDecl::new("a", "mix", 10.0).input("x", 1).output("y", 1)).unwrap();
        g.add_node(NodeDecl::new("b", "mix", 10.0).input("x", 1).output("y", 1)).unwrap();
        g
    }

    #[test]
    fn endpoint_paths_round_trip() {
        for s in ["action/volt", "observation/th", "lowpass/u", "pendulum/sensors/theta", "pendulum/actuators/u"] {
            assert_eq!(s.parse::<Endpoint>().unwrap().to_string(), s);
        }
        assert!("a/b/c".parse::<Endpoint>().is_err());
        assert!("a//b".parse::<Endpoint>().is_err());
    }

    #[test]
    fn connect_rejects_bad_edges() {
        let mut g = two_nodes();
        assert!(matches!(
            g.connect(EdgeSpec::new("a/nope", "b/x")),
            Err(GraphError::UnknownEndpoint(e)) if e == "a/nope"
        ));
        assert!(matches!(g.connect(EdgeSpec::new("a/x", "b/x")), Err(GraphError::NotASource(_))));
        g.connect(EdgeSpec::new("a/y", "b/x")).unwrap();
        assert!(matches!(
            g.connect(EdgeSpec::new("a/y", "b/x")),
            Err(GraphError::DuplicateEdge { .. })
        ));
        assert!(matches!(
            g.connect(EdgeSpec::new("b/y", "b/x").skip()),
            Err(GraphError::TargetConnected { .. })
        ));
        assert!(matches!(
            g.connect(EdgeSpec::new("b/y", "a/x").window(0)),
            Err(GraphError::InvalidEdge { .. })
        ));
    }

    #[test]
    fn two_node_cycle_needs_a_skip() {
        let mut g = two_nodes();
        g.connect(EdgeSpec::new("a/y", "b/x")).unwrap();
        let err = g.connect(EdgeSpec::new("b/y", "a/x")).unwrap_err();
        assert!(matches!(err, GraphError::CycleWithoutSkip { .. }), "{err}");
        g.connect(EdgeSpec::new("b/y", "a/x").skip()).unwrap();
    }

    #[test]
    fn type_mismatch_names_both_ends() {
        let mut g = two_nodes();
        g.add_node(NodeDecl::new("c", "mix", 10.0).input("x", 3).output("y", 1)).unwrap();
        assert_eq!(
            g.connect(EdgeSpec::new("a/y", "c/x")),
            Err(GraphError::TypeMismatch {
                from: "a/y".into(),
                to: "c/x".into(),
                source_dim: 1,
                target_dim: 3
            })
        );
    }

    #[test]
    fn reserved_and_duplicate_names() {
        let mut g = two_nodes();
        assert!(matches!(
            g.add_node(NodeDecl::new("env", "mix", 1.0)),
            Err(GraphError::ReservedName(_))
        ));
        assert!(matches!(
            g.add_node(NodeDecl::new("a", "mix", 1.0)),
            Err(GraphError::DuplicateName(_))
        ));
        assert!(matches!(
            g.add_node(NodeDecl::new("z", "mix", 0.0)),
            Err(GraphError::InvalidRate { .. })
        ));
    }

    #[test]
    fn toml_round_trip() {
        let mut g = two_nodes();
        g.add_action("u", 1).unwrap();
        g.add_observation("o").unwrap();
        g.connect(EdgeSpec::new("action/u", "a/x").delay(0.25)).unwrap();
        g.connect(EdgeSpec::new("a/y", "b/x").window(3)).unwrap();
        g.connect(EdgeSpec::new("b/y", "observation/o").skip()).unwrap();
        g.add_engine("ode", EngineDecl { rate: 30.0, params: BTreeMap::new() }).unwrap();
        let text = g.to_toml();
        assert_eq!(GraphSpec::from_toml(&text).unwrap(), g);
    }

    #[test]
    fn loading_rechecks_edges() {
        let mut g = two_nodes();
        g.connect(EdgeSpec::new("a/y", "b/x")).unwrap();
        g.edges.push(EdgeSpec::new("b/y", "a/x"));
        assert!(matches!(
            GraphSpec::from_toml(&g.to_toml()),
            Err(GraphError::CycleWithoutSkip { .. })
        ));
        let mut text = two_nodes().to_toml();
        text = text.replace("version = 1", "version = 9");
        assert_eq!(GraphSpec::from_toml(&text), Err(GraphError::UnsupportedVersion(9)));
    }
}
