//! Per-node synchronization state machine: buffers arrivals, gates each
//! callback on the expected counts, runs user code, and stamps outputs.

use std::collections::{BTreeMap, VecDeque};
use std::hash::{DefaultHasher, Hash, Hasher};
use std::panic::{self, AssertUnwindSafe};

use thiserror::Error;

use crate::protocol::{expected_count, ChannelTiming, ProtocolError, Rate};
use crate::transport::{Envelope, Payload};

/// Registered state values keyed by their full path (`node/state`).
pub type StateValues = BTreeMap<String, f64>;

/// Buffers above this size trigger a one-time warning per channel.
pub const HIGH_WATER: usize = 10_000;

/// Errors raised by user callbacks and reset hooks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NodeError {
    #[error("{0}")]
    Failed(String),
    /// The environment controller went away; the episode is over.
    #[error("environment controller detached")]
    Detached,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("node {node:?} has no registered state {key:?}")]
    UnknownState { node: String, key: String },
    #[error("state {key:?} = {value} rejected: {reason}")]
    InvalidState {
        key: String,
        value: f64,
        reason: String,
    },
}

/// Contract violations and callback failures. Any of these stops the node.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NodeFault {
    #[error("{node}: sequence gap on input {input:?} (expected {expected}, got {got})")]
    SequenceGap {
        node: String,
        input: String,
        expected: u64,
        got: u64,
    },
    #[error("{node}: callback {k} panicked: {message}")]
    Panicked { node: String, k: u64, message: String },
    #[error("{node}: callback {k} failed: {error}")]
    Callback { node: String, k: u64, error: NodeError },
    #[error("{node}: callback {k} returned {got} outputs, expected {expected}")]
    OutputArity {
        node: String,
        k: u64,
        expected: usize,
        got: usize,
    },
    #[error("{node}: callback {k} output {output:?} has dimension {got}, expected {expected}")]
    OutputDim {
        node: String,
        k: u64,
        output: String,
        expected: usize,
        got: usize,
    },
    #[error("{node}: expected count failed: {error}")]
    Protocol { node: String, error: ProtocolError },
    #[error("{node}: not running")]
    NotRunning { node: String },
}

impl NodeFault {
    pub fn node(&self) -> &str {
        match self {
            NodeFault::SequenceGap { node, .. }
            | NodeFault::Panicked { node, .. }
            | NodeFault::Callback { node, .. }
            | NodeFault::OutputArity { node, .. }
            | NodeFault::OutputDim { node, .. }
            | NodeFault::Protocol { node, .. }
            | NodeFault::NotRunning { node } => node,
        }
    }

    /// True when the fault is the environment shutting the episode down.
    pub fn is_detach(&self) -> bool {
        matches!(
            self,
            NodeFault::Callback {
                error: NodeError::Detached,
                ..
            }
        )
    }
}

/// One input as seen by a callback.
#[derive(Debug)]
pub struct InputView<'a> {
    pub name: &'a str,
    /// Messages consumed by this callback, oldest first.
    pub consumed: &'a [Envelope],
    /// The last `window` payloads consumed on this channel, oldest first,
    /// left-padded to a fixed length.
    pub window: &'a [Payload],
}

impl InputView<'_> {
    /// Most recent payload in the window.
    pub fn latest(&self) -> &Payload {
        self.window.last().expect("window length is at least 1")
    }
}

#[derive(Debug)]
pub struct CallbackContext<'a> {
    pub node: &'a str,
    pub k: u64,
    pub sim_time: f64,
    pub inputs: &'a [InputView<'a>],
}

impl CallbackContext<'_> {
    pub fn input(&self, name: &str) -> Option<&InputView<'_>> {
        self.inputs.iter().find(|i| i.name == name)
    }
}

/// User code run by a node. Must return exactly one payload per output.
pub trait NodeBehavior: Send {
    fn reset(&mut self, _states: &StateValues) -> Result<(), NodeError> {
        Ok(())
    }

    fn callback(&mut self, ctx: &CallbackContext<'_>) -> Result<Vec<Payload>, NodeError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputPort {
    pub name: String,
    pub timing: ChannelTiming,
    pub window: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputPort {
    pub name: String,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Resetting,
    Running,
    Stopped,
}

/// Trace entry for one executed callback.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FireRecord {
    pub k: u64,
    /// Expected count per input for this callback.
    pub expected: Vec<u64>,
    /// Buffered messages per input when the callback was admitted.
    pub available: Vec<usize>,
    /// Sequence numbers consumed per input.
    pub consumed: Vec<Vec<u64>>,
    pub output_hash: u64,
}

#[derive(Debug, Clone)]
pub struct Fired {
    pub k: u64,
    pub outputs: Vec<Envelope>,
}

#[derive(Debug, Clone)]
pub enum FireOutcome {
    Fired(Fired),
    /// Some input holds fewer messages than expected.
    Waiting,
    /// The node has executed its last callback before the horizon.
    Finished,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeStats {
    pub fires: u64,
    pub consumed: Vec<u64>,
    pub received: Vec<u64>,
    pub max_buffered: usize,
}

struct Channel {
    port: InputPort,
    buffer: VecDeque<Envelope>,
    history: VecDeque<Payload>,
    next_seq: u64,
    warned: bool,
}

impl Channel {
    fn window(&self) -> Vec<Payload> {
        let w = self.port.window;
        let pad = self
            .history
            .front()
            .cloned()
            .unwrap_or_else(|| Payload::zeros(self.port.dim));
        let mut out = Vec::with_capacity(w);
        out.extend(std::iter::repeat_n(pad, w.saturating_sub(self.history.len())));
        out.extend(self.history.iter().cloned());
        out
    }

    fn remember(&mut self, consumed: &[Envelope]) {
        for env in consumed {
            self.history.push_back(env.payload.clone());
            if self.history.len() > self.port.window {
                self.history.pop_front();
            }
        }
    }
}

pub struct NodeRuntime {
    name: String,
    rate: Rate,
    channels: Vec<Channel>,
    outputs: Vec<OutputPort>,
    states: Vec<String>,
    behavior: Box<dyn NodeBehavior>,
    k: u64,
    phase: Phase,
    last_k: Option<u64>,
    pending: Option<Vec<u64>>,
    stats: NodeStats,
    trace: Option<Vec<FireRecord>>,
}

impl std::fmt::Debug for NodeRuntime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NodeRuntime")
            .field("name", &self.name)
            .field("rate", &self.rate)
            .field("k", &self.k)
            .field("phase", &self.phase)
            .finish_non_exhaustive()
    }
}

impl NodeRuntime {
    pub fn new(
        name: impl Into<String>,
        rate: Rate,
        inputs: Vec<InputPort>,
        outputs: Vec<OutputPort>,
        states: Vec<String>,
        behavior: Box<dyn NodeBehavior>,
    ) -> Self {
        let n = inputs.len();
        NodeRuntime {
            name: name.into(),
            rate,
            channels: inputs
                .into_iter()
                .map(|port| Channel {
                    port: InputPort {
                        window: port.window.max(1),
                        ..port
                    },
                    buffer: VecDeque::new(),
                    history: VecDeque::new(),
                    next_seq: 0,
                    warned: false,
                })
                .collect(),
            outputs,
            states,
            behavior,
            k: 0,
            phase: Phase::Resetting,
            last_k: None,
            pending: None,
            stats: NodeStats {
                consumed: vec![0; n],
                received: vec![0; n],
                ..NodeStats::default()
            },
            trace: None,
        }
    }

    /// Stops after the callback whose instant is the last one at or before
    /// `horizon` simulated seconds.
    pub fn set_horizon(&mut self, horizon: Option<f64>) {
        self.last_k = horizon.map(|h| (h * self.rate.hz() + 1e-9).floor().max(0.0) as u64);
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rate(&self) -> Rate {
        self.rate
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn inputs(&self) -> impl Iterator<Item = &InputPort> {
        self.channels.iter().map(|c| &c.port)
    }

    pub fn outputs(&self) -> &[OutputPort] {
        &self.outputs
    }

    pub fn buffered(&self, input: usize) -> usize {
        self.channels[input].buffer.len()
    }

    pub fn stats(&self) -> &NodeStats {
        &self.stats
    }

    pub fn trace(&self) -> Option<&[FireRecord]> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Option<Vec<FireRecord>> {
        self.trace.as_mut().map(std::mem::take)
    }

    pub fn is_finished(&self) -> bool {
        self.last_k.is_some_and(|last| self.k > last)
    }

    /// Starts a new episode: `k = 0`, buffers and windows emptied, the reset
    /// hook invoked with the values addressed to this node. Keys must be
    /// among the node's registered states.
    pub fn reset_node(&mut self, values: &StateValues) -> Result<(), NodeError> {
        if let Some(key) = values.keys().find(|key| !self.states.contains(key)) {
            return Err(NodeError::UnknownState {
                node: self.name.clone(),
                key: key.clone(),
            });
        }
        self.phase = Phase::Resetting;
        self.k = 0;
        self.pending = None;
        for ch in &mut self.channels {
            ch.buffer.clear();
            ch.history.clear();
            ch.next_seq = 0;
            ch.warned = false;
        }
        let n = self.channels.len();
        self.stats = NodeStats {
            consumed: vec![0; n],
            received: vec![0; n],
            ..NodeStats::default()
        };
        if let Some(trace) = &mut self.trace {
            trace.clear();
        }
        self.behavior.reset(values)?;
        self.phase = Phase::Running;
        Ok(())
    }

    pub fn stop(&mut self) {
        self.phase = Phase::Stopped;
    }

    /// Buffers an arrival. Sequence numbers must continue the channel
    /// without gaps.
    pub fn on_message(&mut self, input: usize, envelope: Envelope) -> Result<(), NodeFault> {
        if self.phase == Phase::Stopped {
            return Ok(());
        }
        let ch = &mut self.channels[input];
        if envelope.seq != ch.next_seq {
            let fault = NodeFault::SequenceGap {
                node: self.name.clone(),
                input: ch.port.name.clone(),
                expected: ch.next_seq,
                got: envelope.seq,
            };
            self.phase = Phase::Stopped;
            return Err(fault);
        }
        ch.next_seq += 1;
        ch.buffer.push_back(envelope);
        self.stats.received[input] += 1;
        self.stats.max_buffered = self.stats.max_buffered.max(ch.buffer.len());
        if ch.buffer.len() > HIGH_WATER && !ch.warned {
            ch.warned = true;
            log::warn!(
                "{}: input {:?} holds {} unconsumed messages",
                self.name,
                ch.port.name,
                ch.buffer.len()
            );
        }
        Ok(())
    }

    /// Expected counts for the next callback.
    pub fn expected(&mut self) -> Result<&[u64], NodeFault> {
        if self.pending.is_none() {
            let k = self.k;
            let needs = self
                .channels
                .iter()
                .map(|ch| expected_count(k, &ch.port.timing).map(|c| c.get()))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|error| NodeFault::Protocol {
                    node: self.name.clone(),
                    error,
                })?;
            self.pending = Some(needs);
        }
        Ok(self.pending.as_deref().expect("just computed"))
    }

    /// Runs callback `k` if every input holds at least its expected count,
    /// consuming exactly that many of the oldest messages per input.
    pub fn try_fire(&mut self) -> Result<FireOutcome, NodeFault> {
        self.check_running()?;
        if self.is_finished() {
            return Ok(FireOutcome::Finished);
        }
        let needs = self.expected()?.to_vec();
        if self
            .channels
            .iter()
            .zip(&needs)
            .any(|(ch, &need)| (ch.buffer.len() as u64) < need)
        {
            return Ok(FireOutcome::Waiting);
        }
        let available = self.channels.iter().map(|c| c.buffer.len()).collect();
        let consumed: Vec<Vec<Envelope>> = self
            .channels
            .iter_mut()
            .zip(&needs)
            .map(|(ch, &need)| ch.buffer.drain(..need as usize).collect())
            .collect();
        self.pending = None;
        self.run_callback(consumed, needs, available)
    }

    /// Runs callback `k` immediately with whatever is buffered. Used by the
    /// unsynchronized mode.
    pub fn fire_unsynchronized(&mut self) -> Result<FireOutcome, NodeFault> {
        self.check_running()?;
        if self.is_finished() {
            return Ok(FireOutcome::Finished);
        }
        let available: Vec<usize> = self.channels.iter().map(|c| c.buffer.len()).collect();
        let consumed: Vec<Vec<Envelope>> = self
            .channels
            .iter_mut()
            .map(|ch| ch.buffer.drain(..).collect())
            .collect();
        let needs = available.iter().map(|&n| n as u64).collect();
        self.pending = None;
        self.run_callback(consumed, needs, available)
    }

    fn check_running(&self) -> Result<(), NodeFault> {
        if self.phase == Phase::Running {
            Ok(())
        } else {
            Err(NodeFault::NotRunning {
                node: self.name.clone(),
            })
        }
    }

    fn run_callback(
        &mut self,
        consumed: Vec<Vec<Envelope>>,
        expected: Vec<u64>,
        available: Vec<usize>,
    ) -> Result<FireOutcome, NodeFault> {
        let k = self.k;
        for (i, (ch, batch)) in self.channels.iter_mut().zip(&consumed).enumerate() {
            ch.remember(batch);
            self.stats.consumed[i] += batch.len() as u64;
        }
        let windows: Vec<Vec<Payload>> = self.channels.iter().map(Channel::window).collect();
        let views: Vec<InputView<'_>> = self
            .channels
            .iter()
            .zip(&consumed)
            .zip(&windows)
            .map(|((ch, batch), window)| InputView {
                name: &ch.port.name,
                consumed: batch,
                window,
            })
            .collect();
        let sim_time = k as f64 / self.rate.hz();
        let ctx = CallbackContext {
            node: &self.name,
            k,
            sim_time,
            inputs: &views,
        };
        let behavior = &mut self.behavior;
        let result = panic::catch_unwind(AssertUnwindSafe(|| behavior.callback(&ctx)));
        let payloads = match result {
            Ok(Ok(payloads)) => payloads,
            Ok(Err(error)) => {
                return Err(self.fail(NodeFault::Callback {
                    node: self.name.clone(),
                    k,
                    error,
                }))
            }
            Err(panic) => {
                let message = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "non-string panic payload".into());
                return Err(self.fail(NodeFault::Panicked {
                    node: self.name.clone(),
                    k,
                    message,
                }));
            }
        };
        if payloads.len() != self.outputs.len() {
            return Err(self.fail(NodeFault::OutputArity {
                node: self.name.clone(),
                k,
                expected: self.outputs.len(),
                got: payloads.len(),
            }));
        }
        if let Some((port, p)) = self
            .outputs
            .iter()
            .zip(&payloads)
            .find(|(port, p)| port.dim != p.len())
        {
            return Err(self.fail(NodeFault::OutputDim {
                node: self.name.clone(),
                k,
                output: port.name.clone(),
                expected: port.dim,
                got: p.len(),
            }));
        }
        if let Some(trace) = &mut self.trace {
            let mut h = DefaultHasher::new();
            for p in &payloads {
                for v in p.iter() {
                    v.to_bits().hash(&mut h);
                }
            }
            trace.push(FireRecord {
                k,
                expected,
                available,
                consumed: consumed
                    .iter()
                    .map(|b| b.iter().map(|e| e.seq).collect())
                    .collect(),
                output_hash: h.finish(),
            });
        }
        let outputs = payloads
            .into_iter()
            .map(|payload| Envelope {
                payload,
                seq: k,
                sim_time_sent: sim_time,
            })
            .collect();
        self.k += 1;
        self.stats.fires += 1;
        Ok(FireOutcome::Fired(Fired { k, outputs }))
    }

    fn fail(&mut self, fault: NodeFault) -> NodeFault {
        self.phase = Phase::Stopped;
        fault
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;

    impl NodeBehavior for Echo {
        fn callback(&mut self, ctx: &CallbackContext<'_>) -> Result<Vec<Payload>, NodeError> {
            Ok(vec![ctx.inputs[0].latest().clone()])
        }
    }

    struct Panics;

    impl NodeBehavior for Panics {
        fn callback(&mut self, _: &CallbackContext<'_>) -> Result<Vec<Payload>, NodeError> {
            panic!("boom")
        }
    }

    fn node(f_n: f64, f_i: f64, window: usize, behavior: Box<dyn NodeBehavior>) -> NodeRuntime {
        let timing = ChannelTiming::new(Rate::new(f_n).unwrap(), Rate::new(f_i).unwrap(), 0.0, false)
            .unwrap();
        let mut n = NodeRuntime::new(
            "n",
            Rate::new(f_n).unwrap(),
            vec![InputPort {
                name: "in".into(),
                timing,
                window,
                dim: 1,
            }],
            vec![OutputPort {
                name: "out".into(),
                dim: 1,
            }],
            vec!["n/gain".into()],
            behavior,
        );
        n.reset_node(&StateValues::new()).unwrap();
        n.enable_trace();
        n
    }

    fn msg(seq: u64) -> Envelope {
        Envelope {
            payload: Payload::scalar(seq as f64),
            seq,
            sim_time_sent: 0.0,
        }
    }

    #[test]
    fn waits_for_expected_messages() {
        let mut n = node(10.0, 10.0, 1, Box::new(Echo));
        assert!(matches!(n.try_fire().unwrap(), FireOutcome::Waiting));
    }

    #[test]
    fn consumes_oldest_first() {
        let mut n = node(10.0, 10.0, 1, Box::new(Echo));
        n.on_message(0, msg(0)).unwrap();
        n.on_message(0, msg(1)).unwrap();
        match n.try_fire().unwrap() {
            FireOutcome::Fired(f) => {
                assert_eq!(f.k, 0);
                assert_eq!(f.outputs[0].payload.first(), 0.0);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(n.k(), 1);
        assert_eq!(n.buffered(0), 1);
    }

    #[test]
    fn burst_consumed_in_one_callback() {
        let mut n = node(20.0, 60.0, 1, Box::new(Echo));
        n.on_message(0, msg(0)).unwrap();
        assert!(matches!(n.try_fire().unwrap(), FireOutcome::Fired(_)));
        for seq in 1..=3 {
            assert!(matches!(n.try_fire().unwrap(), FireOutcome::Waiting));
            n.on_message(0, msg(seq)).unwrap();
        }
        assert!(matches!(n.try_fire().unwrap(), FireOutcome::Fired(_)));
        assert_eq!(n.trace().unwrap()[1].consumed, vec![vec![1, 2, 3]]);
    }

    #[test]
    fn sequence_gap_is_a_fault() {
        let mut n = node(10.0, 10.0, 1, Box::new(Echo));
        n.on_message(0, msg(0)).unwrap();
        assert!(matches!(
            n.on_message(0, msg(2)),
            Err(NodeFault::SequenceGap { expected: 1, got: 2, .. })
        ));
        assert_eq!(n.phase(), Phase::Stopped);
    }

    #[test]
    fn window_is_left_padded() {
        struct Capture(Vec<Vec<f64>>);
        impl NodeBehavior for Capture {
            fn callback(&mut self, ctx: &CallbackContext<'_>) -> Result<Vec<Payload>, NodeError> {
                self.0 = ctx.inputs[0].window.iter().map(|p| p.to_vec()).collect();
                Ok(vec![Payload::scalar(self.0.len() as f64)])
            }
        }
        let mut n = node(10.0, 10.0, 3, Box::new(Capture(vec![])));
        n.on_message(0, msg(0)).unwrap();
        let FireOutcome::Fired(f) = n.try_fire().unwrap() else {
            panic!()
        };
        assert_eq!(f.outputs[0].payload.first(), 3.0);
    }

    #[test]
    fn panic_stops_the_node() {
        let mut n = node(10.0, 10.0, 1, Box::new(Panics));
        n.on_message(0, msg(0)).unwrap();
        let fault = n.try_fire().unwrap_err();
        assert!(matches!(fault, NodeFault::Panicked { k: 0, .. }));
        assert_eq!(n.phase(), Phase::Stopped);
        assert!(n.try_fire().is_err());
    }

    #[test]
    fn reset_clears_buffers_and_rejects_unknown_keys() {
        let mut n = node(10.0, 10.0, 1, Box::new(Echo));
        for seq in 0..5 {
            n.on_message(0, msg(seq)).unwrap();
        }
        n.try_fire().unwrap();
        n.reset_node(&StateValues::new()).unwrap();
        assert_eq!((n.k(), n.buffered(0)), (0, 0));
        n.on_message(0, msg(0)).unwrap();

        let bad = StateValues::from([("n/mass".to_string(), 1.0)]);
        assert_eq!(
            n.reset_node(&bad),
            Err(NodeError::UnknownState {
                node: "n".into(),
                key: "n/mass".into()
            })
        );
    }

    #[test]
    fn horizon_finishes_the_node() {
        let mut n = node(10.0, 10.0, 1, Box::new(Echo));
        n.set_horizon(Some(0.1));
        for seq in 0..3 {
            n.on_message(0, msg(seq)).unwrap();
        }
        assert!(matches!(n.try_fire().unwrap(), FireOutcome::Fired(_)));
        assert!(matches!(n.try_fire().unwrap(), FireOutcome::Fired(_)));
        assert!(matches!(n.try_fire().unwrap(), FireOutcome::Finished));
    }

    #[test]
    fn unsynchronized_consumes_everything() {
        let mut n = node(10.0, 10.0, 2, Box::new(Echo));
        for seq in 0..4 {
            n.on_message(0, msg(seq)).unwrap();
        }
        let FireOutcome::Fired(f) = n.fire_unsynchronized().unwrap() else {
            panic!()
        };
        assert_eq!(f.outputs[0].payload.first(), 3.0);
        assert_eq!(n.buffered(0), 0);
    }
}
