use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ratesync::demo;
use ratesync::env::{
    latest, run_episode, EpisodeConfig, Environment, PendulumCost, Policy, RandomPolicy, SwingUpPolicy, TapePolicy,
    Trajectory, ZeroPolicy,
};
use ratesync::executor::{CostModel, Execution, RunOptions};
use ratesync::graph::{resolve, Catalog, ConcreteGraph};
use ratesync::nodes::{build_wiring, NodeRegistry};
use ratesync::protocol::{
    check_two_node_cycle, expected_count, oracle_expected_schedule, ChannelTiming, Rate,
};
use ratesync::transport::{ClockMode, SyncMode};

use crate::config::{ExperimentConfig, Mode, PolicyKind};
use crate::metrics::{variance, MetricsRecord, MetricsWriter};
use crate::HarnessError;

fn clock(mode: Mode, rtf: f64) -> ClockMode {
    ClockMode {
        mode: match mode {
            Mode::Sync => SyncMode::Sync,
            Mode::Async => SyncMode::Async,
        },
        target_rtf: rtf,
    }
}

fn resolved(cfg: &ExperimentConfig) -> Result<ConcreteGraph, HarnessError> {
    Ok(resolve(&cfg.load_graph()?, &cfg.engine, &Catalog::standard())?)
}

fn environment(cfg: &ExperimentConfig, graph: &ConcreteGraph, mode: Mode, rtf: f64) -> Result<Environment, HarnessError> {
    let options = RunOptions {
        clock: clock(mode, rtf),
        stall_timeout: Duration::from_secs_f64(cfg.stall_timeout_s),
        ..RunOptions::default()
    };
    let reward = PendulumCost {
        theta: cfg.theta.clone(),
        action: cfg.action.clone(),
        ..PendulumCost::default()
    };
    Environment::new(graph.clone(), NodeRegistry::standard(), options, Box::new(reward))
        .map_err(|e| HarnessError::from_env("setup", e))
}

/// Steps needed for the last observation to land at `seconds`. Reset
/// returns the observation at one env period; each step adds one more.
fn steps_for(graph: &ConcreteGraph, seconds: f64) -> u64 {
    let rate = graph.env().map_or(1.0, |e| e.rate);
    ((seconds * rate - 1.0 - 1e-9).ceil() as u64).max(1)
}

fn setting_id(mode: Mode, rtf: f64) -> String {
    format!("{mode}@{rtf}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub sin_theta: f64,
    pub realized_rtf: f64,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SettingResult {
    pub setting: String,
    pub mode: Mode,
    pub target_rtf: f64,
    pub runs: Vec<RunResult>,
    pub variance: f64,
}

impl SettingResult {
    pub fn hashes_identical(&self) -> bool {
        self.runs.windows(2).all(|w| w[0].hash == w[1].hash)
    }

    pub fn records(&self) -> Vec<MetricsRecord> {
        self.runs
            .iter()
            .enumerate()
            .map(|(i, r)| MetricsRecord {
                setting: self.setting.clone(),
                mode: self.mode.to_string(),
                target_rtf: self.target_rtf,
                run: i as u32,
                sin_theta: Some(r.sin_theta),
                variance: Some(self.variance),
                realized_rtf: r.realized_rtf,
                episode_hash: Some(r.hash.clone()),
            })
            .collect()
    }
}

/// For every (mode, target_rtf) pair, runs the same action tape `runs`
/// times and reports the spread of sin(theta) at `episode_seconds`. Rows
/// are written to `cfg.out` as each setting completes.
pub fn run_variance_sweep(cfg: &ExperimentConfig) -> Result<Vec<SettingResult>, HarnessError> {
    cfg.validate_variance()?;
    let graph = resolved(cfg)?;
    let max_steps = steps_for(&graph, cfg.episode_seconds);
    let mut writer = cfg.out.as_deref().map(MetricsWriter::create).transpose()?;
    let mut results = Vec::new();
    for &mode in &cfg.modes {
        for &rtf in &cfg.target_rtf {
            let setting = setting_id(mode, rtf);
            let mut env = environment(cfg, &graph, mode, rtf)?;
            let mut runs = Vec::new();
            for _ in 0..cfg.runs {
                let mut tape = TapePolicy::new(&cfg.action, cfg.tape_amplitude, cfg.tape_frequency);
                let traj = run_episode(&mut env, &mut tape, &EpisodeConfig::new(cfg.seed, max_steps))
                    .map_err(|e| HarnessError::from_env(&setting, e))?;
                let record = traj
                    .at_time(cfg.episode_seconds)
                    .ok_or_else(|| HarnessError::episode(&setting, "episode ended early"))?;
                runs.push(RunResult {
                    sin_theta: latest(&record.observation, &cfg.theta).sin(),
                    realized_rtf: traj.realized_rtf,
                    hash: traj.hash,
                });
            }
            let sins: Vec<f64> = runs.iter().map(|r| r.sin_theta).collect();
            let result = SettingResult {
                setting,
                mode,
                target_rtf: rtf,
                variance: variance(&sins),
                runs,
            };
            if let Some(w) = writer.as_mut() {
                w.write(&result.records())?;
            }
            results.push(result);
        }
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupResult {
    pub cost_ms: f64,
    pub sim_seconds: f64,
    pub cost_model: CostModel,
    pub baseline_rtf: f64,
    pub delayed_rtf: f64,
}

impl SpeedupResult {
    pub fn ratio(&self) -> f64 {
        self.delayed_rtf / self.baseline_rtf
    }

    pub fn records(&self) -> Vec<MetricsRecord> {
        [("no_delay", self.baseline_rtf), ("one_period_delay", self.delayed_rtf)]
            .into_iter()
            .map(|(setting, rtf)| MetricsRecord {
                setting: setting.into(),
                mode: "sync".into(),
                target_rtf: 0.0,
                run: 0,
                sin_theta: None,
                variance: None,
                realized_rtf: rtf,
                episode_hash: None,
            })
            .collect()
    }
}

impl fmt::Display for SpeedupResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cost {} ms per callback ({:?}), {} s simulated: no delay rtf {:.3}, one-period delay rtf {:.3}, ratio {:.3}",
            self.cost_ms,
            self.cost_model,
            self.sim_seconds,
            self.baseline_rtf,
            self.delayed_rtf,
            self.ratio()
        )
    }
}

fn loop_rtf(cfg: &ExperimentConfig, pipelined: bool) -> Result<f64, HarnessError> {
    let setting = if pipelined { "one_period_delay" } else { "no_delay" };
    let graph = resolve(&demo::pipeline_graph(cfg.cost_ms, pipelined)?, "ode", &Catalog::standard())?;
    let wiring = build_wiring(&graph, &NodeRegistry::standard())?;
    let options = RunOptions {
        clock: ClockMode::sync(0.0),
        horizon: Some(cfg.speedup_seconds),
        stall_timeout: Duration::from_secs_f64(cfg.stall_timeout_s),
        ..RunOptions::default()
    };
    let summary = Execution::start(wiring, &options)
        .map_err(|e| HarnessError::from_run(setting, e))?
        .wait()
        .map_err(|e| HarnessError::from_run(setting, e))?;
    Ok(cfg.speedup_seconds / summary.wall.as_secs_f64().max(1e-9))
}

/// Realized real-time factor of the engine/controller loop with and
/// without a one-period delay on the controller output, both at unlimited
/// target speed.
pub fn run_delay_speedup(cfg: &ExperimentConfig) -> Result<SpeedupResult, HarnessError> {
    if !(cfg.cost_ms.is_finite() && cfg.cost_ms >= 0.0) {
        return Err(HarnessError::Config(format!("cost_ms must be >= 0, got {}", cfg.cost_ms)));
    }
    if !(cfg.speedup_seconds.is_finite() && cfg.speedup_seconds > 0.0) {
        return Err(HarnessError::Config("speedup_seconds must be positive".into()));
    }
    let result = SpeedupResult {
        cost_ms: cfg.cost_ms,
        sim_seconds: cfg.speedup_seconds,
        cost_model: CostModel::Auto.resolve(),
        baseline_rtf: loop_rtf(cfg, false)?,
        delayed_rtf: loop_rtf(cfg, true)?,
    };
    if let Some(path) = &cfg.out {
        MetricsWriter::create(path)?.write(&result.records())?;
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConformanceReport {
    pub seed: u64,
    pub cases: u32,
    pub acyclic_passed: u32,
    pub cyclic_passed: u32,
    pub cycles_live: u32,
    pub first_counterexample: Option<String>,
    pub elapsed: Duration,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.acyclic_passed == self.cases && self.cyclic_passed == self.cases && self.cycles_live == self.cases
    }
}

impl fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "acyclic: {}/{} match the oracle", self.acyclic_passed, self.cases)?;
        writeln!(f, "cyclic: {}/{} match the oracle", self.cyclic_passed, self.cases)?;
        writeln!(f, "two-node cycles: {}/{} deadlock-free", self.cycles_live, self.cases)?;
        if let Some(c) = &self.first_counterexample {
            writeln!(f, "first counterexample: {c}")?;
        }
        write!(f, "seed {} in {:.2?}", self.seed, self.elapsed)
    }
}

const CONFORMANCE_K: u64 = 100;

/// Rate on a 1 mHz grid in [0.5, 500] Hz.
fn fuzz_rate(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(500u32..=500_000) as f64 / 1000.0
}

fn schedule_mismatch(timing: &ChannelTiming) -> Result<Option<String>, String> {
    let oracle = oracle_expected_schedule(timing, CONFORMANCE_K).map_err(|e| e.to_string())?;
    for (k, want) in oracle.into_iter().enumerate() {
        let got = expected_count(k as u64, timing).map_err(|e| e.to_string())?.get();
        if got != want {
            return Ok(Some(format!(
                "f_n={} f_i={} tau={} cyclic={} k={k}: formula {got}, oracle {want}",
                timing.consumer_rate().hz(),
                timing.producer_rate().hz(),
                timing.delay(),
                timing.is_cyclic()
            )));
        }
    }
    Ok(None)
}

/// Compares the count formulas against the timeline oracle for `cases`
/// random acyclic and cyclic channels, and drives a two-node cycle built
/// from each cyclic case.
pub fn run_conformance(seed: u64, cases: u32) -> Result<ConformanceReport, HarnessError> {
    if cases == 0 {
        return Err(HarnessError::Config("cases must be at least 1".into()));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ConformanceReport {
        seed,
        cases,
        acyclic_passed: 0,
        cyclic_passed: 0,
        cycles_live: 0,
        first_counterexample: None,
        elapsed: Duration::ZERO,
    };
    let internal = |e: ratesync::protocol::ProtocolError| HarnessError::Config(e.to_string());
    for _ in 0..cases {
        for cyclic in [false, true] {
            let (f_n, f_i) = (fuzz_rate(&mut rng), fuzz_rate(&mut rng));
            let tau = rng.random_range(0.0..3.0) / f_i;
            let timing = ChannelTiming::new(Rate::new(f_n).map_err(internal)?, Rate::new(f_i).map_err(internal)?, tau, cyclic)
                .map_err(internal)?;
            match schedule_mismatch(&timing).map_err(HarnessError::Config)? {
                None if cyclic => report.cyclic_passed += 1,
                None => report.acyclic_passed += 1,
                Some(c) => {
                    report.first_counterexample.get_or_insert(c);
                }
            }
            if cyclic {
                let back = rng.random_range(0.0..3.0) / f_n;
                let cycle = check_two_node_cycle(timing.consumer_rate(), timing.producer_rate(), tau, back, CONFORMANCE_K)
                    .map_err(internal)?;
                if cycle.deadlocked {
                    report.first_counterexample.get_or_insert(format!(
                        "cycle {f_n} Hz <-> {f_i} Hz (delays {tau}, {back}) deadlocks: {cycle:?}"
                    ));
                } else {
                    report.cycles_live += 1;
                }
            }
        }
    }
    report.elapsed = started.elapsed();
    Ok(report)
}

/// One episode with the configured policy, mode and first target_rtf. The
/// trajectory is written as JSON lines to `cfg.out` when set.
pub fn run_single(cfg: &ExperimentConfig) -> Result<Trajectory, HarnessError> {
    cfg.validate_episode()?;
    let mode = *cfg.modes.first().unwrap_or(&Mode::Sync);
    let rtf = *cfg.target_rtf.first().unwrap_or(&0.0);
    if mode == Mode::Async && !(rtf > 0.0 && rtf <= crate::config::MAX_ASYNC_RTF) {
        return Err(HarnessError::Config(format!("async mode needs 0 < target_rtf <= 32, got {rtf}")));
    }
    let graph = resolved(cfg)?;
    let mut env = environment(cfg, &graph, mode, rtf)?;
    let mut policy: Box<dyn Policy> = match cfg.policy {
        PolicyKind::Tape => Box::new(TapePolicy::new(&cfg.action, cfg.tape_amplitude, cfg.tape_frequency)),
        PolicyKind::Random => Box::new(RandomPolicy::new(&cfg.action, 2.0)),
        PolicyKind::Zero => Box::new(ZeroPolicy::new(&cfg.action)),
        PolicyKind::Swingup => Box::new(SwingUpPolicy {
            theta: cfg.theta.clone(),
            action: cfg.action.clone(),
            ..SwingUpPolicy::default()
        }),
    };
    let setting = setting_id(mode, rtf);
    let config = EpisodeConfig::new(cfg.seed, steps_for(&graph, cfg.episode_seconds));
    let traj = run_episode(&mut env, policy.as_mut(), &config).map_err(|e| HarnessError::from_env(&setting, e))?;
    if let Some(path) = &cfg.out {
        let error = |e: std::io::Error| HarnessError::Output {
            path: path.clone(),
            error: e.to_string(),
        };
        let file = File::create(path).map_err(error)?;
        traj.write_jsonl(BufWriter::new(file)).map_err(error)?;
    }
    Ok(traj)
}
