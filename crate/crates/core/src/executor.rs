//! Drivers that run a set of wired node runtimes: one thread per node for
//! real runs, and a single-threaded cooperative loop used as a reference.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use thiserror::Error;

use crate::node::{FireOutcome, Fired, NodeFault, NodeRuntime};
use crate::transport::{
    throttle, ChannelEndpoint, ClockMode, Delivery, SyncMode, Transport, TransportError,
};

/// How injected per-callback compute cost is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostModel {
    /// Busy-wait on the CPU.
    Spin,
    /// Block the thread. Overlaps even on a single core.
    Sleep,
    /// `Spin` when at least two cores are available, `Sleep` otherwise.
    #[default]
    Auto,
}

impl CostModel {
    pub fn resolve(self) -> CostModel {
        match self {
            CostModel::Auto => {
                let cores = thread::available_parallelism().map_or(1, |n| n.get());
                if cores >= 2 {
                    CostModel::Spin
                } else {
                    CostModel::Sleep
                }
            }
            other => other,
        }
    }

    pub fn apply(self, cost: Duration) {
        if cost.is_zero() {
            return;
        }
        match self.resolve() {
            CostModel::Sleep => thread::sleep(cost),
            _ => {
                let until = Instant::now() + cost;
                while Instant::now() < until {
                    std::hint::spin_loop();
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub clock: ClockMode,
    /// Simulated seconds after which every node stops.
    pub horizon: Option<f64>,
    /// A run with no callback progress for this long is declared stalled.
    pub stall_timeout: Duration,
    /// Random extra latency before each delivery.
    pub latency: Option<Duration>,
    pub cost_model: CostModel,
    pub trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            clock: ClockMode::default(),
            horizon: None,
            stall_timeout: Duration::from_secs(10),
            latency: None,
            cost_model: CostModel::Auto,
            trace: false,
        }
    }
}

/// Runtimes plus the routing between them, indexed alike.
pub struct Wiring {
    pub nodes: Vec<NodeRuntime>,
    /// `endpoints[node][output]`.
    pub endpoints: Vec<Vec<ChannelEndpoint>>,
    /// Nodes that pace simulated time against the wall clock.
    pub throttled: Vec<bool>,
    /// Injected compute cost per callback.
    pub costs: Vec<Duration>,
}

#[derive(Debug, Clone)]
pub enum RuntimeEvent {
    Fault(NodeFault),
    Finished { node: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error("node fault: {0}")]
    Fault(NodeFault),
    #[error("no callback progress; callback indices: {0:?}")]
    Stall(Vec<(String, u64)>),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("{0}")]
    Config(String),
}

#[derive(Debug)]
pub struct RunSummary {
    pub nodes: Vec<NodeRuntime>,
    pub wall: Duration,
}

impl RunSummary {
    pub fn node(&self, name: &str) -> Option<&NodeRuntime> {
        self.nodes.iter().find(|n| n.name() == name)
    }
}

struct Shared {
    transport: Arc<Transport>,
    events: Sender<RuntimeEvent>,
    progress: Arc<AtomicU64>,
    ks: Arc<Vec<AtomicU64>>,
    start: Instant,
    clock: ClockMode,
    cost_model: CostModel,
}

impl Shared {
    fn emit(&self, node: usize, rt: &NodeRuntime, fired: Fired, throttled: bool, cost: Duration) -> bool {
        self.cost_model.apply(cost);
        if throttled && self.clock.is_sync() {
            throttle(self.start, fired.k as f64 / rt.rate().hz(), &self.clock);
        }
        self.ks[node].store(fired.k + 1, Ordering::Relaxed);
        self.progress.fetch_add(1, Ordering::Relaxed);
        for (output, envelope) in fired.outputs.into_iter().enumerate() {
            if self.transport.publish_output(node, output, envelope).is_err() {
                return false;
            }
        }
        true
    }
}

/// A running threaded execution.
pub struct Execution {
    transport: Arc<Transport>,
    handles: Vec<JoinHandle<NodeRuntime>>,
    events: Receiver<RuntimeEvent>,
    progress: Arc<AtomicU64>,
    ks: Arc<Vec<AtomicU64>>,
    names: Vec<String>,
    start: Instant,
    stall_timeout: Duration,
}

impl Execution {
    pub fn start(wiring: Wiring, options: &RunOptions) -> Result<Execution, RunError> {
        let Wiring {
            mut nodes,
            endpoints,
            throttled,
            costs,
        } = wiring;
        if endpoints.len() != nodes.len() || throttled.len() != nodes.len() || costs.len() != nodes.len() {
            return Err(RunError::Config("wiring tables disagree in length".into()));
        }
        let (transport, inboxes) = Transport::new(endpoints, options.clock)?;
        let transport = match options.latency {
            Some(max) => transport.with_latency_injection(max),
            None => transport,
        };
        let transport = Arc::new(transport);
        let (events_tx, events) = unbounded();
        let progress = Arc::new(AtomicU64::new(0));
        let ks = Arc::new((0..nodes.len()).map(|_| AtomicU64::new(0)).collect::<Vec<_>>());
        let names = nodes.iter().map(|n| n.name().to_string()).collect();
        let start = Instant::now();

        let mut handles = Vec::with_capacity(nodes.len());
        for (index, ((mut rt, inbox), (throttled, cost))) in nodes
            .drain(..)
            .zip(inboxes)
            .zip(throttled.into_iter().zip(costs))
            .enumerate()
        {
            rt.set_horizon(options.horizon);
            if options.trace {
                rt.enable_trace();
            }
            let shared = Shared {
                transport: Arc::clone(&transport),
                events: events_tx.clone(),
                progress: Arc::clone(&progress),
                ks: Arc::clone(&ks),
                start,
                clock: options.clock,
                cost_model: options.cost_model.resolve(),
            };
            let handle = thread::Builder::new()
                .name(format!("node-{}", rt.name()))
                .spawn(move || match shared.clock.mode {
                    SyncMode::Sync => run_synchronized(rt, index, inbox, shared, throttled, cost),
                    SyncMode::Async => run_unsynchronized(rt, index, inbox, shared, throttled, cost),
                })
                .map_err(|e| RunError::Config(format!("cannot spawn node thread: {e}")))?;
            handles.push(handle);
        }
        Ok(Execution {
            transport,
            handles,
            events,
            progress,
            ks,
            names,
            start,
            stall_timeout: options.stall_timeout,
        })
    }

    pub fn events(&self) -> &Receiver<RuntimeEvent> {
        &self.events
    }

    /// Total callbacks executed so far across all nodes.
    pub fn progress(&self) -> u64 {
        self.progress.load(Ordering::Relaxed)
    }

    pub fn started(&self) -> Instant {
        self.start
    }

    pub fn stall_timeout(&self) -> Duration {
        self.stall_timeout
    }

    /// Next callback index per node.
    pub fn callback_indices(&self) -> Vec<(String, u64)> {
        self.names
            .iter()
            .cloned()
            .zip(self.ks.iter().map(|k| k.load(Ordering::Relaxed)))
            .collect()
    }

    /// Waits until every node reaches the horizon. Faults and stalls stop
    /// the run.
    pub fn wait(self) -> Result<RunSummary, RunError> {
        let mut finished = 0;
        let mut last_progress = self.progress();
        let mut last_change = Instant::now();
        let poll = self.stall_timeout.min(Duration::from_millis(200));
        while finished < self.names.len() {
            match self.events.recv_timeout(poll) {
                Ok(RuntimeEvent::Finished { .. }) => finished += 1,
                Ok(RuntimeEvent::Fault(fault)) => {
                    self.stop();
                    return Err(RunError::Fault(fault));
                }
                Err(RecvTimeoutError::Timeout) => {
                    let now = self.progress();
                    if now != last_progress {
                        last_progress = now;
                        last_change = Instant::now();
                    } else if last_change.elapsed() >= self.stall_timeout {
                        let ks = self.callback_indices();
                        self.stop();
                        return Err(RunError::Stall(ks));
                    }
                }
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        Ok(self.stop())
    }

    /// Shuts the transport down and joins every node thread.
    pub fn stop(self) -> RunSummary {
        self.transport.shutdown();
        let wall = self.start.elapsed();
        let nodes = self
            .handles
            .into_iter()
            .map(|h| h.join().expect("node threads catch callback panics"))
            .collect();
        RunSummary { nodes, wall }
    }
}

fn run_synchronized(
    mut rt: NodeRuntime,
    index: usize,
    inbox: Receiver<Delivery>,
    shared: Shared,
    throttled: bool,
    cost: Duration,
) -> NodeRuntime {
    loop {
        // Fire until blocked; each fire re-evaluates all gates.
        loop {
            match rt.try_fire() {
                Ok(FireOutcome::Fired(fired)) => {
                    if !shared.emit(index, &rt, fired, throttled, cost) {
                        return rt;
                    }
                }
                Ok(FireOutcome::Waiting) => break,
                Ok(FireOutcome::Finished) => {
                    let _ = shared.events.send(RuntimeEvent::Finished { node: index });
                    return rt;
                }
                Err(fault) => {
                    let _ = shared.events.send(RuntimeEvent::Fault(fault));
                    return rt;
                }
            }
        }
        // Block for one delivery, then take everything else already queued.
        let first = match inbox.recv() {
            Ok(d) => d,
            Err(_) => return rt,
        };
        for delivery in std::iter::once(first).chain(inbox.try_iter()) {
            match delivery {
                Delivery::Message { input, envelope } => {
                    if let Err(fault) = rt.on_message(input, envelope) {
                        let _ = shared.events.send(RuntimeEvent::Fault(fault));
                        return rt;
                    }
                }
                Delivery::Stop => return rt,
            }
        }
    }
}

fn run_unsynchronized(
    mut rt: NodeRuntime,
    index: usize,
    inbox: Receiver<Delivery>,
    shared: Shared,
    throttled: bool,
    cost: Duration,
) -> NodeRuntime {
    loop {
        if rt.is_finished() {
            let _ = shared.events.send(RuntimeEvent::Finished { node: index });
            return rt;
        }
        let due = shared
            .clock
            .wall_duration(rt.k() as f64 / rt.rate().hz())
            .map(|d| shared.start + d);
        // Buffer whatever arrives until this node's timer expires.
        loop {
            let wait = due.map_or(Duration::ZERO, |d| d.saturating_duration_since(Instant::now()));
            let delivery = if wait.is_zero() {
                match inbox.try_recv() {
                    Ok(d) => d,
                    Err(crossbeam_channel::TryRecvError::Empty) => break,
                    Err(crossbeam_channel::TryRecvError::Disconnected) => return rt,
                }
            } else {
                match inbox.recv_timeout(wait) {
                    Ok(d) => d,
                    Err(RecvTimeoutError::Timeout) => continue,
                    Err(RecvTimeoutError::Disconnected) => return rt,
                }
            };
            match delivery {
                Delivery::Message { input, envelope } => {
                    if let Err(fault) = rt.on_message(input, envelope) {
                        let _ = shared.events.send(RuntimeEvent::Fault(fault));
                        return rt;
                    }
                }
                Delivery::Stop => return rt,
            }
        }
        match rt.fire_unsynchronized() {
            Ok(FireOutcome::Fired(fired)) => {
                if !shared.emit(index, &rt, fired, throttled, cost) {
                    return rt;
                }
            }
            Ok(_) => {}
            Err(fault) => {
                let _ = shared.events.send(RuntimeEvent::Fault(fault));
                return rt;
            }
        }
    }
}

/// Runs every node to `horizon` on the calling thread, delivering outputs
/// immediately. Deterministic; detects stalls exactly.
pub fn run_cooperative(wiring: Wiring, horizon: f64, trace: bool) -> Result<RunSummary, RunError> {
    let start = Instant::now();
    let Wiring {
        mut nodes, endpoints, ..
    } = wiring;
    for rt in &mut nodes {
        rt.set_horizon(Some(horizon));
        if trace {
            rt.enable_trace();
        }
    }
    let mut done = vec![false; nodes.len()];
    loop {
        let mut progressed = false;
        for i in 0..nodes.len() {
            if done[i] {
                continue;
            }
            loop {
                match nodes[i].try_fire().map_err(RunError::Fault)? {
                    FireOutcome::Fired(fired) => {
                        progressed = true;
                        for (output, envelope) in fired.outputs.into_iter().enumerate() {
                            for c in &endpoints[i][output].consumers {
                                nodes[c.node]
                                    .on_message(c.input, envelope.clone())
                                    .map_err(RunError::Fault)?;
                            }
                        }
                    }
                    FireOutcome::Waiting => break,
                    FireOutcome::Finished => {
                        done[i] = true;
                        break;
                    }
                }
            }
        }
        if done.iter().all(|&d| d) {
            return Ok(RunSummary {
                nodes,
                wall: start.elapsed(),
            });
        }
        if !progressed {
            return Err(RunError::Stall(
                nodes.iter().map(|n| (n.name().to_string(), n.k())).collect(),
            ));
        }
    }
}
