//! Ordered, lossless in-process channels, the parameter server, and the
//! wall-clock side of simulated time (throttling and delayed delivery).

use std::cmp::Ordering as CmpOrdering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::ops::Deref;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Message body. Cheap to clone so fan-out does not copy data.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct Payload(Arc<[f64]>);

impl Payload {
    pub fn new(values: Vec<f64>) -> Self {
        Payload(values.into())
    }

    pub fn scalar(value: f64) -> Self {
        Payload(Arc::from([value]))
    }

    pub fn zeros(dim: usize) -> Self {
        Payload(vec![0.0; dim].into())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// First component, or 0 for an empty payload.
    pub fn first(&self) -> f64 {
        self.0.first().copied().unwrap_or(0.0)
    }
}

impl Deref for Payload {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Payload {
    fn from(values: Vec<f64>) -> Self {
        Payload::new(values)
    }
}

impl From<Payload> for Vec<f64> {
    fn from(payload: Payload) -> Self {
        payload.0.to_vec()
    }
}

impl fmt::Debug for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

/// A message in transit.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub payload: Payload,
    /// Per-channel sequence number, starting at 0 with no gaps.
    pub seq: u64,
    /// Simulated time of the callback that produced it.
    pub sim_time_sent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyncMode {
    /// Callbacks gated on expected message counts.
    Sync,
    /// Callbacks on wall-clock timers, consuming whatever has arrived.
    Async,
}

impl fmt::Display for SyncMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SyncMode::Sync => f.write_str("sync"),
            SyncMode::Async => f.write_str("async"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockMode {
    pub mode: SyncMode,
    /// Target ratio of simulated to wall time. 0 means unlimited.
    pub target_rtf: f64,
}

impl ClockMode {
    pub fn sync(target_rtf: f64) -> Self {
        ClockMode {
            mode: SyncMode::Sync,
            target_rtf,
        }
    }

    pub fn async_at(target_rtf: f64) -> Self {
        ClockMode {
            mode: SyncMode::Async,
            target_rtf,
        }
    }

    pub fn is_sync(&self) -> bool {
        self.mode == SyncMode::Sync
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        if self.target_rtf.is_finite() && self.target_rtf >= 0.0 {
            Ok(())
        } else {
            Err(TransportError::InvalidRtf(self.target_rtf))
        }
    }

    /// Wall-clock duration corresponding to `sim_seconds`, or `None` when
    /// unthrottled.
    pub fn wall_duration(&self, sim_seconds: f64) -> Option<Duration> {
        (self.target_rtf > 0.0).then(|| Duration::from_secs_f64(sim_seconds.max(0.0) / self.target_rtf))
    }
}

impl Default for ClockMode {
    fn default() -> Self {
        ClockMode::sync(0.0)
    }
}

/// Sleeps until at least `engine_sim_time / target_rtf` wall seconds have
/// passed since `start`. Returns immediately when the target is 0.
pub fn throttle(start: Instant, engine_sim_time: f64, mode: &ClockMode) {
    if let Some(target) = mode.wall_duration(engine_sim_time) {
        let elapsed = start.elapsed();
        if target > elapsed {
            thread::sleep(target - elapsed);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("publish after shutdown (node {node}, output {output})")]
    Closed { node: usize, output: usize },
    #[error("real-time factor must be finite and non-negative, got {0}")]
    InvalidRtf(f64),
    #[error("no endpoint for node {node}, output {output}")]
    UnknownEndpoint { node: usize, output: usize },
}

/// What a node's listener receives.
#[derive(Debug, Clone)]
pub enum Delivery {
    Message { input: usize, envelope: Envelope },
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsumerRef {
    pub node: usize,
    pub input: usize,
    /// Simulated delay of this edge in seconds.
    pub delay: f64,
}

/// One producer output and every input it feeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEndpoint {
    pub node: usize,
    pub output: usize,
    pub consumers: Vec<ConsumerRef>,
}

struct Scheduled {
    due: Instant,
    order: u64,
    target: usize,
    delivery: Delivery,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.due == other.due && self.order == other.order
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed: BinaryHeap is a max-heap and we want the earliest first.
    fn cmp(&self, other: &Self) -> CmpOrdering {
        (other.due, other.order).cmp(&(self.due, self.order))
    }
}

/// Holds messages back for a wall-clock interval. Ties on the due instant
/// are released in submission order, so per-channel FIFO is kept.
struct DelayLine {
    tx: Option<Sender<Scheduled>>,
    order: AtomicU64,
    handle: Option<JoinHandle<()>>,
}

impl DelayLine {
    fn spawn(inboxes: Vec<Sender<Delivery>>) -> Self {
        let (tx, rx) = unbounded::<Scheduled>();
        let handle = thread::Builder::new()
            .name("delay-line".into())
            .spawn(move || {
                let mut heap = BinaryHeap::new();
                loop {
                    let now = Instant::now();
                    while heap.peek().is_some_and(|s: &Scheduled| s.due <= now) {
                        let s = heap.pop().expect("peeked");
                        let _ = inboxes[s.target].send(s.delivery);
                    }
                    let received = match heap.peek() {
                        Some(next) => rx.recv_timeout(next.due.saturating_duration_since(now)),
                        None => rx.recv().map_err(|_| RecvTimeoutError::Disconnected),
                    };
                    match received {
                        Ok(s) => heap.push(s),
                        Err(RecvTimeoutError::Timeout) => {}
                        Err(RecvTimeoutError::Disconnected) => break,
                    }
                }
            })
            .expect("spawn delay line");
        DelayLine {
            tx: Some(tx),
            order: AtomicU64::new(0),
            handle: Some(handle),
        }
    }

    fn schedule(&self, due: Instant, target: usize, delivery: Delivery) {
        let order = self.order.fetch_add(1, Ordering::Relaxed);
        if let Some(tx) = &self.tx {
            let _ = tx.send(Scheduled {
                due,
                order,
                target,
                delivery,
            });
        }
    }
}

impl Drop for DelayLine {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

/// Fan-out router between node outputs and node listeners.
///
/// Synchronized mode delivers immediately; delays are honored by the
/// consumers' expected counts. Asynchronous mode holds each message for
/// `delay / target_rtf` wall seconds before delivery.
pub struct Transport {
    inboxes: Vec<Sender<Delivery>>,
    endpoints: Vec<Vec<ChannelEndpoint>>,
    mode: ClockMode,
    delay_line: Option<DelayLine>,
    open: AtomicBool,
    latency: Option<Duration>,
    published: AtomicU64,
}

impl Transport {
    /// `endpoints[node][output]` lists the consumers of that output.
    /// Returns the transport and one listener receiver per node.
    pub fn new(
        endpoints: Vec<Vec<ChannelEndpoint>>,
        mode: ClockMode,
    ) -> Result<(Transport, Vec<Receiver<Delivery>>), TransportError> {
        mode.validate()?;
        let (inboxes, receivers): (Vec<_>, Vec<_>) =
            (0..endpoints.len()).map(|_| unbounded()).unzip();
        let needs_delay_line = mode.mode == SyncMode::Async
            && mode.target_rtf > 0.0
            && endpoints
                .iter()
                .flatten()
                .flat_map(|e| &e.consumers)
                .any(|c| c.delay > 0.0);
        let delay_line = needs_delay_line.then(|| DelayLine::spawn(inboxes.clone()));
        Ok((
            Transport {
                inboxes,
                endpoints,
                mode,
                delay_line,
                open: AtomicBool::new(true),
                latency: None,
                published: AtomicU64::new(0),
            },
            receivers,
        ))
    }

    /// Sleeps a random duration up to `max` before every delivery. Used to
    /// show that synchronized runs do not depend on delivery timing.
    pub fn with_latency_injection(mut self, max: Duration) -> Self {
        self.latency = Some(max);
        self
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    pub fn endpoint(&self, node: usize, output: usize) -> Result<&ChannelEndpoint, TransportError> {
        self.endpoints
            .get(node)
            .and_then(|outputs| outputs.get(output))
            .ok_or(TransportError::UnknownEndpoint { node, output })
    }

    pub fn publish_output(
        &self,
        node: usize,
        output: usize,
        envelope: Envelope,
    ) -> Result<(), TransportError> {
        self.publish(self.endpoint(node, output)?, envelope)
    }

    /// Delivers `envelope` to every consumer of `endpoint`. Never blocks on
    /// the consumers.
    pub fn publish(&self, endpoint: &ChannelEndpoint, envelope: Envelope) -> Result<(), TransportError> {
        if !self.open.load(Ordering::Acquire) {
            return Err(TransportError::Closed {
                node: endpoint.node,
                output: endpoint.output,
            });
        }
        if let Some(max) = self.latency {
            let nanos = rand::rng().random_range(0..=max.as_nanos() as u64);
            thread::sleep(Duration::from_nanos(nanos));
        }
        let sent = Instant::now();
        for consumer in &endpoint.consumers {
            let delivery = Delivery::Message {
                input: consumer.input,
                envelope: envelope.clone(),
            };
            match (&self.delay_line, self.mode.wall_duration(consumer.delay)) {
                (Some(line), Some(hold)) if consumer.delay > 0.0 => {
                    line.schedule(sent + hold, consumer.node, delivery)
                }
                // A listener that already exited is shutting down; nothing to do.
                _ => {
                    let _ = self.inboxes[consumer.node].send(delivery);
                }
            }
        }
        self.published.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Number of successful `publish` calls.
    pub fn published(&self) -> u64 {
        self.published.load(Ordering::Relaxed)
    }

    /// Rejects further publishes and tells every listener to stop.
    pub fn shutdown(&self) {
        self.open.store(false, Ordering::Release);
        for inbox in &self.inboxes {
            let _ = inbox.send(Delivery::Stop);
        }
    }

    pub fn is_open(&self) -> bool {
        self.open.load(Ordering::Acquire)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Number(f64),
    Text(String),
    List(Vec<f64>),
}

impl ParamValue {
    pub fn type_name(&self) -> &'static str {
        match self {
            ParamValue::Bool(_) => "bool",
            ParamValue::Number(_) => "number",
            ParamValue::Text(_) => "text",
            ParamValue::List(_) => "list",
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Number(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Text(v.to_string())
    }
}

impl From<bool> for ParamValue {
    fn from(v: bool) -> Self {
        ParamValue::Bool(v)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("malformed parameter key {0:?}: expected non-empty '/'-separated segments of [A-Za-z0-9_.-]")]
    BadKey(String),
    #[error("parameter {0:?} not found")]
    NotFound(String),
    #[error("parameter {key:?} holds a {actual}, not a {expected}")]
    TypeMismatch {
        key: String,
        expected: &'static str,
        actual: &'static str,
    },
}

fn check_key(key: &str) -> Result<(), ParamError> {
    let ok = !key.is_empty()
        && key.split('/').all(|seg| {
            !seg.is_empty()
                && seg
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        });
    if ok {
        Ok(())
    } else {
        Err(ParamError::BadKey(key.to_string()))
    }
}

/// Shared namespaced key/value store. Writes to a key are totally ordered;
/// each committed value carries the global write index it was assigned.
#[derive(Debug, Default)]
pub struct ParameterStore {
    entries: RwLock<HashMap<String, (u64, ParamValue)>>,
    writes: Mutex<u64>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `value` and returns its write index.
    pub fn set(&self, key: &str, value: impl Into<ParamValue>) -> Result<u64, ParamError> {
        check_key(key)?;
        let mut entries = self.entries.write().expect("parameter store poisoned");
        let mut writes = self.writes.lock().expect("parameter store poisoned");
        *writes += 1;
        entries.insert(key.to_string(), (*writes, value.into()));
        Ok(*writes)
    }

    pub fn get(&self, key: &str) -> Result<ParamValue, ParamError> {
        self.get_versioned(key).map(|(_, v)| v)
    }

    pub fn get_versioned(&self, key: &str) -> Result<(u64, ParamValue), ParamError> {
        check_key(key)?;
        self.entries
            .read()
            .expect("parameter store poisoned")
            .get(key)
            .cloned()
            .ok_or_else(|| ParamError::NotFound(key.to_string()))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64, ParamError> {
        let value = self.get(key)?;
        value.as_f64().ok_or(ParamError::TypeMismatch {
            key: key.to_string(),
            expected: "number",
            actual: value.type_name(),
        })
    }

    pub fn keys(&self) -> Vec<String> {
        let mut keys: Vec<_> = self
            .entries
            .read()
            .expect("parameter store poisoned")
            .keys()
            .cloned()
            .collect();
        keys.sort();
        keys
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(seq: u64) -> Envelope {
        Envelope {
            payload: Payload::scalar(seq as f64),
            seq,
            sim_time_sent: seq as f64 * 0.1,
        }
    }

    fn drain(rx: &Receiver<Delivery>) -> Vec<u64> {
        rx.try_iter()
            .filter_map(|d| match d {
                Delivery::Message { envelope, .. } => Some(envelope.seq),
                Delivery::Stop => None,
            })
            .collect()
    }

    fn fan_out(delay: f64) -> Vec<Vec<ChannelEndpoint>> {
        vec![
            vec![ChannelEndpoint {
                node: 0,
                output: 0,
                consumers: vec![
                    ConsumerRef { node: 1, input: 0, delay },
                    ConsumerRef { node: 2, input: 0, delay },
                ],
            }],
            vec![],
            vec![],
        ]
    }

    #[test]
    fn fan_out_preserves_order() {
        let (t, rx) = Transport::new(fan_out(0.0), ClockMode::sync(0.0)).unwrap();
        for seq in 0..3 {
            t.publish_output(0, 0, env(seq)).unwrap();
        }
        assert_eq!(drain(&rx[1]), vec![0, 1, 2]);
        assert_eq!(drain(&rx[2]), vec![0, 1, 2]);
    }

    #[test]
    fn sync_mode_ignores_delay_for_delivery() {
        let (t, rx) = Transport::new(fan_out(0.1), ClockMode::sync(1.0)).unwrap();
        t.publish_output(0, 0, env(0)).unwrap();
        assert_eq!(drain(&rx[1]), vec![0]);
    }

    #[test]
    fn async_mode_holds_messages_for_scaled_delay() {
        let (t, rx) = Transport::new(fan_out(0.1), ClockMode::async_at(1.0)).unwrap();
        let start = Instant::now();
        t.publish_output(0, 0, env(0)).unwrap();
        assert!(drain(&rx[1]).is_empty());
        match rx[1].recv_timeout(Duration::from_secs(2)).unwrap() {
            Delivery::Message { envelope, .. } => assert_eq!(envelope.seq, 0),
            Delivery::Stop => panic!("unexpected stop"),
        }
        let waited = start.elapsed().as_secs_f64();
        assert!((0.095..0.3).contains(&waited), "waited {waited}");
    }

    #[test]
    fn publish_after_shutdown_fails() {
        let (t, _rx) = Transport::new(fan_out(0.0), ClockMode::sync(0.0)).unwrap();
        t.shutdown();
        assert!(matches!(
            t.publish_output(0, 0, env(0)),
            Err(TransportError::Closed { .. })
        ));
    }

    #[test]
    fn throttle_unlimited_returns_at_once() {
        let start = Instant::now();
        throttle(start, 100.0, &ClockMode::sync(0.0));
        assert!(start.elapsed() < Duration::from_millis(20));
    }

    #[test]
    fn throttle_scales_with_rtf() {
        let start = Instant::now();
        throttle(start, 1.0, &ClockMode::sync(5.0));
        let waited = start.elapsed().as_secs_f64();
        assert!(waited >= 0.2 && waited < 0.22 + 0.05, "waited {waited}");
    }

    #[test]
    fn parameter_round_trip() {
        let store = ParameterStore::new();
        store.set("pendulum/mass", 0.033).unwrap();
        assert_eq!(store.get_f64("pendulum/mass").unwrap(), 0.033);
        assert_eq!(
            store.get("pendulum/length"),
            Err(ParamError::NotFound("pendulum/length".into()))
        );
        store.set("pendulum/model", "disk").unwrap();
        assert!(matches!(
            store.get_f64("pendulum/model"),
            Err(ParamError::TypeMismatch { .. })
        ));
        assert!(matches!(store.set("bad//key", 1.0), Err(ParamError::BadKey(_))));
        assert!(matches!(store.set("", 1.0), Err(ParamError::BadKey(_))));
    }

    #[test]
    fn concurrent_writers_are_totally_ordered() {
        let store = Arc::new(ParameterStore::new());
        let writers: Vec<_> = (0..2)
            .map(|w| {
                let store = Arc::clone(&store);
                thread::spawn(move || {
                    let mut indices = Vec::new();
                    for i in 0..500 {
                        indices.push(store.set("shared/x", (w * 1000 + i) as f64).unwrap());
                    }
                    indices
                })
            })
            .collect();
        let mut all: Vec<u64> = writers.into_iter().flat_map(|h| h.join().unwrap()).collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 1000, "write indices must be unique");
        let (version, _) = store.get_versioned("shared/x").unwrap();
        assert_eq!(version, 1000, "last committed write wins");
    }
}
