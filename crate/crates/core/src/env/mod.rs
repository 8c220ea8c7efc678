//! Episodic environment on top of a resolved graph. The environment is
//! itself a node: it publishes actions and consumes observations under
//! the same protocol as every other node.

mod episode;
mod policy;
mod randomize;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, select, Receiver, Sender};
use thiserror::Error;

use crate::engine::wrap_angle;
use crate::executor::{Execution, RunError, RunOptions, RunSummary, RuntimeEvent};
use crate::graph::{ConcreteGraph, PortDecl};
use crate::node::{CallbackContext, NodeBehavior, NodeError, NodeFault, StateValues};
use crate::nodes::{build_wiring, BuildError, NodeRegistry};
use crate::transport::Payload;

pub use episode::{episode_hash, run_episode, StepRecord, Trajectory};
pub use policy::{Policy, RandomPolicy, SwingUpPolicy, TapePolicy, ZeroPolicy};
pub use randomize::{DelayRandomization, Distribution, EpisodeConfig, EpisodeSample, Randomization};

/// Observation windows by name: `window` rows of `dim` values, oldest first.
pub type Observation = BTreeMap<String, Vec<Vec<f64>>>;
pub type Action = BTreeMap<String, Vec<f64>>;
pub type Info = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("episode fault: {0}")]
    Fault(NodeFault),
    #[error("episode stalled; callback indices: {0:?}")]
    Stall(Vec<(String, u64)>),
    #[error("no episode in progress; call reset first")]
    NotReset,
    #[error("episode is over; call reset to start a new one")]
    EpisodeOver,
    #[error("action keys {got:?} do not match declared actions {expected:?}")]
    ActionMismatch { expected: Vec<String>, got: Vec<String> },
    #[error("action {name:?} has {got} values, expected {expected}")]
    ActionDim { name: String, expected: usize, got: usize },
    #[error("no node registers state {0:?}")]
    UnknownState(String),
    #[error("no edge targets {0:?}")]
    UnknownDelayTarget(String),
    #[error("node {node:?} rejected its reset: {error}")]
    Reset { node: String, error: NodeError },
}

impl EnvError {
    /// True for errors raised while an episode was running.
    pub fn is_episode_fault(&self) -> bool {
        matches!(self, EnvError::Fault(_) | EnvError::Stall(_) | EnvError::Run(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: Info,
}

/// Computes the reward and termination for each step.
pub trait RewardHook: Send {
    fn reward(&mut self, observation: &Observation, action: &Action) -> f64;

    fn terminated(&mut self, _observation: &Observation) -> bool {
        false
    }
}

impl<F> RewardHook for F
where
    F: FnMut(&Observation, &Action) -> f64 + Send,
{
    fn reward(&mut self, observation: &Observation, action: &Action) -> f64 {
        self(observation, action)
    }
}

/// Latest value of the first component of an observation, or 0.
pub fn latest(observation: &Observation, key: &str) -> f64 {
    observation
        .get(key)
        .and_then(|w| w.last())
        .and_then(|row| row.first())
        .copied()
        .unwrap_or(0.0)
}

/// Quadratic swing-up cost: `-(phi^2 + 0.1 thetadot^2 + 0.001 u^2)` with
/// `phi` the angle from upright.
#[derive(Debug, Clone)]
pub struct PendulumCost {
    pub theta: String,
    pub thetadot: String,
    pub action: String,
}

impl Default for PendulumCost {
    fn default() -> Self {
        PendulumCost {
            theta: "th".into(),
            thetadot: "thdot".into(),
            action: "volt".into(),
        }
    }
}

impl RewardHook for PendulumCost {
    fn reward(&mut self, observation: &Observation, action: &Action) -> f64 {
        let phi = wrap_angle(latest(observation, &self.theta) - std::f64::consts::PI);
        let thetadot = latest(observation, &self.thetadot);
        let u = action.get(&self.action).and_then(|v| v.first()).copied().unwrap_or(0.0);
        -(phi * phi + 0.1 * thetadot * thetadot + 0.001 * u * u)
    }
}

/// What the environment node hands to the controller each callback.
#[derive(Debug, Clone)]
struct EnvTick {
    sim_time: f64,
    observation: Observation,
}

struct EnvPort {
    ticks: Sender<EnvTick>,
    actions: Receiver<Vec<Payload>>,
}

type PortSlot = Arc<Mutex<Option<EnvPort>>>;

/// The environment's node behavior. Callback 0 publishes zero actions; every
/// later callback hands the observation to the controller and publishes the
/// action it returns.
struct EnvNode {
    slot: PortSlot,
    port: Option<EnvPort>,
    action_dims: Vec<usize>,
}

impl NodeBehavior for EnvNode {
    fn reset(&mut self, _: &StateValues) -> Result<(), NodeError> {
        if let Some(port) = self.slot.lock().expect("env port slot poisoned").take() {
            self.port = Some(port);
        }
        Ok(())
    }

    fn callback(&mut self, ctx: &CallbackContext<'_>) -> Result<Vec<Payload>, NodeError> {
        if ctx.k == 0 {
            return Ok(self.action_dims.iter().map(|&d| Payload::zeros(d)).collect());
        }
        let port = self.port.as_ref().ok_or(NodeError::Detached)?;
        let observation = ctx
            .inputs
            .iter()
            .map(|i| (i.name.to_string(), i.window.iter().map(|p| p.to_vec()).collect()))
            .collect();
        port.ticks
            .send(EnvTick {
                sim_time: ctx.sim_time,
                observation,
            })
            .map_err(|_| NodeError::Detached)?;
        port.actions.recv().map_err(|_| NodeError::Detached)
    }
}

struct Episode {
    graph: ConcreteGraph,
    execution: Execution,
    ticks: Receiver<EnvTick>,
    actions: Sender<Vec<Payload>>,
    step: u64,
    max_steps: u64,
    sim_time: f64,
    last_tick: Instant,
}

/// Statistics of the most recently finished episode.
#[derive(Debug)]
pub struct EpisodeStats {
    pub steps: u64,
    /// Simulated time of the last observation.
    pub sim_time: f64,
    /// Wall time from episode start to the last observation.
    pub wall: Duration,
    pub summary: RunSummary,
}

impl EpisodeStats {
    pub fn realized_rtf(&self) -> f64 {
        self.sim_time / self.wall.as_secs_f64().max(1e-9)
    }
}

enum Phase {
    Idle,
    Active(Box<Episode>),
    Done,
}

pub struct Environment {
    graph: ConcreteGraph,
    registry: NodeRegistry,
    slot: PortSlot,
    options: RunOptions,
    reward: Box<dyn RewardHook>,
    actions: Vec<PortDecl>,
    env_rate: f64,
    phase: Phase,
    last: Option<EpisodeStats>,
}

impl Environment {
    /// `graph` must contain an environment node. The registry is extended
    /// with the environment's own behavior.
    pub fn new(
        graph: ConcreteGraph,
        registry: NodeRegistry,
        options: RunOptions,
        reward: Box<dyn RewardHook>,
    ) -> Result<Self, EnvError> {
        let env = graph
            .env()
            .ok_or_else(|| EnvError::Config("graph has no actions or observations".into()))?;
        let actions = env.outputs.clone();
        let env_rate = env.rate;
        let slot: PortSlot = Arc::new(Mutex::new(None));
        let mut registry = registry;
        let node_slot = Arc::clone(&slot);
        registry.register("env", move |spec| {
            Ok(Box::new(EnvNode {
                slot: Arc::clone(&node_slot),
                port: None,
                action_dims: spec.outputs.iter().map(|p| p.dim).collect(),
            }))
        });
        // Fail early on graphs that cannot run.
        build_wiring(&graph, &registry)?;
        Ok(Environment {
            graph,
            registry,
            slot,
            options,
            reward,
            actions,
            env_rate,
            phase: Phase::Idle,
            last: None,
        })
    }

    pub fn graph(&self) -> &ConcreteGraph {
        &self.graph
    }

    pub fn action_names(&self) -> Vec<String> {
        self.actions.iter().map(|a| a.name.clone()).collect()
    }

    pub fn options(&self) -> &RunOptions {
        &self.options
    }

    pub fn set_options(&mut self, options: RunOptions) {
        self.options = options;
    }

    /// The graph the current episode runs, with its sampled delays.
    pub fn episode_graph(&self) -> Option<&ConcreteGraph> {
        match &self.phase {
            Phase::Active(e) => Some(&e.graph),
            _ => None,
        }
    }

    /// Statistics of the last finished episode.
    pub fn last_episode(&self) -> Option<&EpisodeStats> {
        self.last.as_ref()
    }

    /// Starts a new episode: samples the configured states and delays,
    /// resets every node, and runs one environment period with zero
    /// actions to produce the first observation.
    pub fn reset(&mut self, config: &EpisodeConfig) -> Result<(Observation, Info), EnvError> {
        self.finish();
        config.validate()?;
        let sample = config.sample();

        let mut graph = self.graph.clone();
        for (target, delay) in &sample.delays {
            if !graph.set_delay(target, *delay) {
                return Err(EnvError::UnknownDelayTarget(target.clone()));
            }
        }
        let registered = graph.states();
        if let Some(key) = sample.states.keys().find(|k| !registered.contains(k)) {
            return Err(EnvError::UnknownState(key.clone()));
        }

        let (tick_tx, ticks) = bounded(1);
        let (actions, action_rx) = bounded(1);
        *self.slot.lock().expect("env port slot poisoned") = Some(EnvPort {
            ticks: tick_tx,
            actions: action_rx,
        });
        let mut wiring = build_wiring(&graph, &self.registry)?;
        for rt in &mut wiring.nodes {
            let values: StateValues = sample
                .states
                .iter()
                .filter(|(k, _)| rt.states().contains(k))
                .map(|(k, v)| (k.clone(), *v))
                .collect();
            rt.reset_node(&values).map_err(|error| EnvError::Reset {
                node: rt.name().to_string(),
                error,
            })?;
        }
        let options = RunOptions {
            horizon: Some((config.max_steps + 2) as f64 / self.env_rate),
            ..self.options.clone()
        };
        let execution = Execution::start(wiring, &options)?;
        self.phase = Phase::Active(Box::new(Episode {
            graph,
            execution,
            ticks,
            actions,
            step: 0,
            max_steps: config.max_steps,
            sim_time: 0.0,
            last_tick: Instant::now(),
        }));
        let tick = self.next_tick()?;
        let mut info = Info::from([("sim_time".to_string(), tick.sim_time), ("step".to_string(), 0.0)]);
        for (k, v) in &sample.states {
            info.insert(format!("state:{k}"), *v);
        }
        for (k, v) in &sample.delays {
            info.insert(format!("delay:{k}"), *v);
        }
        Ok((tick.observation, info))
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let episode = match &mut self.phase {
            Phase::Idle => return Err(EnvError::NotReset),
            Phase::Done => return Err(EnvError::EpisodeOver),
            Phase::Active(e) => e,
        };
        let expected: Vec<String> = self.actions.iter().map(|a| a.name.clone()).collect();
        let got: Vec<String> = action.keys().cloned().collect();
        if got.len() != expected.len() || expected.iter().any(|k| !action.contains_key(k)) {
            let mut expected = expected;
            expected.sort();
            return Err(EnvError::ActionMismatch { expected, got });
        }
        let mut payloads = Vec::with_capacity(self.actions.len());
        for decl in &self.actions {
            let values = &action[&decl.name];
            if values.len() != decl.dim {
                return Err(EnvError::ActionDim {
                    name: decl.name.clone(),
                    expected: decl.dim,
                    got: values.len(),
                });
            }
            payloads.push(Payload::new(values.clone()));
        }
        if episode.actions.send(payloads).is_err() {
            return Err(self.fail_from_events());
        }
        let tick = self.next_tick()?;
        let reward = self.reward.reward(&tick.observation, action);
        let terminated = self.reward.terminated(&tick.observation);
        let Phase::Active(episode) = &mut self.phase else {
            unreachable!("next_tick succeeded")
        };
        episode.step += 1;
        let step = episode.step;
        let truncated = step >= episode.max_steps;
        let info = Info::from([("sim_time".to_string(), tick.sim_time), ("step".to_string(), step as f64)]);
        if terminated || truncated {
            self.finish();
            self.phase = Phase::Done;
        }
        Ok(StepResult {
            observation: tick.observation,
            reward,
            terminated,
            truncated,
            info,
        })
    }

    /// Ends the current episode, if any, and releases its threads.
    pub fn shutdown(&mut self) {
        self.finish();
    }

    fn finish(&mut self) {
        if let Phase::Active(episode) = std::mem::replace(&mut self.phase, Phase::Idle) {
            let Episode {
                execution,
                ticks,
                actions,
                step,
                sim_time,
                last_tick,
                ..
            } = *episode;
            let wall = last_tick.duration_since(execution.started());
            // Closing the controller side makes the environment callback
            // return, after which shutdown can join every thread.
            drop(actions);
            drop(ticks);
            let summary = execution.stop();
            self.last = Some(EpisodeStats {
                steps: step,
                sim_time,
                wall,
                summary,
            });
        }
        self.slot.lock().expect("env port slot poisoned").take();
    }

    fn fail(&mut self, error: EnvError) -> EnvError {
        self.finish();
        self.phase = Phase::Done;
        error
    }

    fn fail_from_events(&mut self) -> EnvError {
        let fault = match &self.phase {
            Phase::Active(e) => e.execution.events().try_iter().find_map(|ev| match ev {
                RuntimeEvent::Fault(f) if !f.is_detach() => Some(f),
                _ => None,
            }),
            _ => None,
        };
        let error = match fault {
            Some(f) => EnvError::Fault(f),
            None => EnvError::Config("environment node stopped unexpectedly".into()),
        };
        self.fail(error)
    }

    fn next_tick(&mut self) -> Result<EnvTick, EnvError> {
        let Phase::Active(episode) = &mut self.phase else {
            return Err(EnvError::NotReset);
        };
        let stall = episode.execution.stall_timeout();
        let mut last_progress = episode.execution.progress();
        let mut last_change = Instant::now();
        let poll = stall.min(Duration::from_millis(200));
        loop {
            let events = episode.execution.events();
            select! {
                recv(episode.ticks) -> tick => match tick {
                    Ok(tick) => {
                        episode.sim_time = tick.sim_time;
                        episode.last_tick = Instant::now();
                        return Ok(tick);
                    }
                    Err(_) => return Err(self.fail_from_events()),
                },
                recv(events) -> event => match event {
                    Ok(RuntimeEvent::Fault(f)) => return Err(self.fail(EnvError::Fault(f))),
                    Ok(RuntimeEvent::Finished { .. }) => {}
                    Err(_) => return Err(self.fail_from_events()),
                },
                default(poll) => {
                    let now = episode.execution.progress();
                    if now != last_progress {
                        last_progress = now;
                        last_change = Instant::now();
                    } else if last_change.elapsed() >= stall {
                        let ks = episode.execution.callback_indices();
                        return Err(self.fail(EnvError::Stall(ks)));
                    }
                }
            }
        }
    }
}

impl Drop for Environment {
    fn drop(&mut self) {
        self.finish();
    }
}
