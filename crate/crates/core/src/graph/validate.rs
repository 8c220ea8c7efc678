use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;

use super::{ConcreteGraph, NodeRole};
use crate::protocol::{Rate, TickGrid};

/// Consumer/producer rate ratio above which a warning is raised.
pub const RATE_RATIO_WARNING: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DiagCode {
    NodeNoInput,
    NodeRateInvalid,
    DuplicateNode,
    CycleWithoutSkip,
    DanglingChannel,
    ActionUnconnected,
    DimMismatch,
    ChannelRateMismatch,
    EdgeInvalid,
    RateRatioHigh,
}

impl DiagCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagCode::NodeNoInput => "NODE_NO_INPUT",
            DiagCode::NodeRateInvalid => "NODE_RATE_INVALID",
            DiagCode::DuplicateNode => "DUPLICATE_NODE",
            DiagCode::CycleWithoutSkip => "CYCLE_WITHOUT_SKIP",
            DiagCode::DanglingChannel => "DANGLING_CHANNEL",
            DiagCode::ActionUnconnected => "ACTION_UNCONNECTED",
            DiagCode::DimMismatch => "DIM_MISMATCH",
            DiagCode::ChannelRateMismatch => "CHANNEL_RATE_MISMATCH",
            DiagCode::EdgeInvalid => "EDGE_INVALID",
            DiagCode::RateRatioHigh => "RATE_RATIO_HIGH",
        }
    }
}

impl fmt::Display for DiagCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub code: DiagCode,
    pub severity: Severity,
    /// Nodes, channels or edges the diagnostic is about.
    pub subjects: Vec<String>,
    pub message: String,
}

impl Diagnostic {
    fn error(code: DiagCode, subjects: Vec<String>, message: String) -> Self {
        Diagnostic {
            code,
            severity: Severity::Error,
            subjects,
            message,
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let severity = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{severity} {}: {}", self.code, self.message)
    }
}

fn rate_ok(hz: f64) -> bool {
    Rate::new(hz).is_ok_and(|r| TickGrid::default().rate_ticks(r).is_ok())
}

/// Structural checks on a concrete graph. An empty result means runnable.
pub fn validate(graph: &ConcreteGraph) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut index = BTreeMap::new();
    for (i, node) in graph.nodes.iter().enumerate() {
        if index.insert(node.name.as_str(), i).is_some() {
            out.push(Diagnostic::error(
                DiagCode::DuplicateNode,
                vec![node.name.clone()],
                format!("node name {:?} used more than once", node.name),
            ));
        }
    }

    let mut consumed_outputs = BTreeSet::new();
    for node in &graph.nodes {
        if !rate_ok(node.rate) {
            out.push(Diagnostic::error(
                DiagCode::NodeRateInvalid,
                vec![node.name.clone()],
                format!("{} has rate {} Hz; rates must be positive, finite and at least 1 µHz", node.name, node.rate),
            ));
        }
        if node.inputs.is_empty() {
            out.push(Diagnostic::error(
                DiagCode::NodeNoInput,
                vec![node.name.clone()],
                format!("{} has no input channel", node.name),
            ));
        }
        for ch in &node.inputs {
            let here = format!("{}:{}", node.name, ch.name);
            let Some(source) = &ch.source else {
                out.push(Diagnostic::error(
                    DiagCode::DanglingChannel,
                    vec![here.clone()],
                    format!("input {here} is not connected"),
                ));
                continue;
            };
            consumed_outputs.insert((source.node.as_str(), source.port.as_str()));
            let edge = format!("{source} -> {here}");
            let producer = index.get(source.node.as_str()).map(|&i| &graph.nodes[i]);
            let Some(port) = producer.and_then(|p| p.outputs.iter().find(|o| o.name == source.port)) else {
                out.push(Diagnostic::error(
                    DiagCode::DanglingChannel,
                    vec![edge.clone()],
                    format!("{edge}: no such producer output"),
                ));
                continue;
            };
            let producer = producer.expect("port found");
            if port.dim != ch.dim {
                out.push(Diagnostic::error(
                    DiagCode::DimMismatch,
                    vec![edge.clone()],
                    format!("{edge}: producer dimension {} but channel dimension {}", port.dim, ch.dim),
                ));
            }
            if ch.rate != producer.rate {
                out.push(Diagnostic::error(
                    DiagCode::ChannelRateMismatch,
                    vec![edge.clone()],
                    format!("{edge}: channel rate {} but producer runs at {}", ch.rate, producer.rate),
                ));
            }
            if !(ch.delay.is_finite() && ch.delay >= 0.0) || ch.window == 0 {
                out.push(Diagnostic::error(
                    DiagCode::EdgeInvalid,
                    vec![edge.clone()],
                    format!("{edge}: delay {} / window {} out of range", ch.delay, ch.window),
                ));
            }
            if rate_ok(ch.rate) && rate_ok(node.rate) && ch.rate / node.rate > RATE_RATIO_WARNING {
                out.push(Diagnostic {
                    code: DiagCode::RateRatioHigh,
                    severity: Severity::Warning,
                    subjects: vec![edge.clone()],
                    message: format!(
                        "{edge}: producer is {:.0}x faster than consumer; each callback will consume large bursts",
                        ch.rate / node.rate
                    ),
                });
            }
        }
    }

    if let Some(env) = graph.nodes.iter().find(|n| n.role == NodeRole::Env) {
        for action in &env.outputs {
            if !consumed_outputs.contains(&(env.name.as_str(), action.name.as_str())) {
                out.push(Diagnostic::error(
                    DiagCode::ActionUnconnected,
                    vec![format!("action/{}", action.name)],
                    format!("action {:?} has no target", action.name),
                ));
            }
        }
    }

    out.extend(cycle_diagnostics(graph, &index));
    out
}

fn cycle_diagnostics(graph: &ConcreteGraph, index: &BTreeMap<&str, usize>) -> Vec<Diagnostic> {
    let mut g = DiGraph::<usize, String>::new();
    let vertices: Vec<_> = (0..graph.nodes.len()).map(|i| g.add_node(i)).collect();
    for (i, node) in graph.nodes.iter().enumerate() {
        for ch in node.inputs.iter().filter(|c| !c.cyclic) {
            if let Some(&p) = ch.source.as_ref().and_then(|s| index.get(s.node.as_str())) {
                let label = format!("{} -> {}:{}", ch.source.as_ref().expect("checked"), node.name, ch.name);
                g.add_edge(vertices[p], vertices[i], label);
            }
        }
    }
    let mut out = Vec::new();
    for component in tarjan_scc(&g) {
        let members: BTreeSet<_> = component.iter().copied().collect();
        let mut edges: Vec<String> = g
            .edge_indices()
            .filter(|&e| {
                let (a, b) = g.edge_endpoints(e).expect("valid edge");
                members.contains(&a) && members.contains(&b)
            })
            .map(|e| g[e].clone())
            .collect();
        if component.len() == 1 && edges.is_empty() {
            continue;
        }
        edges.sort();
        let mut names: Vec<&str> = component.iter().map(|&v| graph.nodes[g[v]].name.as_str()).collect();
        names.sort();
        out.push(Diagnostic::error(
            DiagCode::CycleWithoutSkip,
            edges,
            format!("cycle through {} has no cyclic (skip) channel", names.join(", ")),
        ));
    }
    out
}
