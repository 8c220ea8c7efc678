//! Runs every acceptance criterion in order and prints one PASS or FAIL
//! line for each. Exits nonzero if any criterion fails.

use std::f64::consts::PI;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use ratesync::demo;
use ratesync::engine::{step, EngineState, InertiaModel, PendulumParams, StepInputs};
use ratesync::env::{run_episode, Action, Distribution, Environment, EpisodeConfig, PendulumCost, ZeroPolicy};
use ratesync::executor::{run_cooperative, RunOptions};
use ratesync::graph::{resolve, validate, Catalog};
use ratesync::nodes::{build_wiring, NodeRegistry};
use ratesync::transport::{ChannelEndpoint, ClockMode, ConsumerRef, Delivery, Envelope, Payload, Transport};
use ratesync_harness::{run_conformance, run_delay_speedup, run_variance_sweep, ExperimentConfig, Mode};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn oracle_conformance() -> Outcome {
    let report = run_conformance(2024, 1000).map_err(|e| e.to_string())?;
    let detail = format!(
        "acyclic {}/1000, cyclic {}/1000, cycles live {}/1000 in {:.2?}",
        report.acyclic_passed, report.cyclic_passed, report.cycles_live, report.elapsed
    );
    let detail = match &report.first_counterexample {
        Some(c) => format!("{detail}; {c}"),
        None => detail,
    };
    check(report.passed() && report.elapsed < Duration::from_secs(10), detail)
}

fn sync_determinism() -> Outcome {
    let started = Instant::now();
    let cfg = ExperimentConfig {
        modes: vec![Mode::Sync],
        target_rtf: vec![1.0, 5.0, 0.0],
        runs: 5,
        ..ExperimentConfig::default()
    };
    let results = run_variance_sweep(&cfg).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let first = &results[0].runs[0].hash;
    let same_everywhere = results.iter().flat_map(|s| &s.runs).all(|r| &r.hash == first);
    let zero = results.iter().all(|s| s.variance == 0.0 && s.hashes_identical());
    let variances: Vec<String> = results.iter().map(|s| format!("{} {:e}", s.setting, s.variance)).collect();
    check(
        zero && same_everywhere && elapsed < Duration::from_secs(120),
        format!(
            "{}; hashes identical across all 15 runs: {same_everywhere}; {:.1?}",
            variances.join(", "),
            elapsed
        ),
    )
}

fn async_degradation() -> Outcome {
    let mut positive = 0;
    let mut seen = Vec::new();
    for sweep in 0..5 {
        let cfg = ExperimentConfig {
            modes: vec![Mode::Async],
            target_rtf: vec![16.0],
            runs: 5,
            seed: sweep,
            ..ExperimentConfig::default()
        };
        let variance = run_variance_sweep(&cfg).map_err(|e| e.to_string())?[0].variance;
        if variance > 0.0 {
            positive += 1;
        }
        seen.push(format!("{variance:.2e}"));
    }
    check(
        positive >= 4,
        format!("{positive}/5 sweeps with positive variance [{}]", seen.join(", ")),
    )
}

fn delay_parallelization() -> Outcome {
    let started = Instant::now();
    let result = run_delay_speedup(&ExperimentConfig::default()).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    check(
        result.ratio() >= 1.2 && elapsed < Duration::from_secs(60),
        format!("{result} in {elapsed:.1?}"),
    )
}

fn liveness() -> Outcome {
    let started = Instant::now();
    let catalog = Catalog::standard();
    let registry = NodeRegistry::standard();
    for seed in 0..200 {
        let graph = demo::fuzz_graph(seed).map_err(|e| format!("seed {seed}: {e}"))?;
        let concrete = resolve(&graph, "counter", &catalog).map_err(|e| format!("seed {seed}: {e}"))?;
        let horizon = 100.0 / concrete.engine_node().unwrap().rate;
        let wiring = build_wiring(&concrete, &registry).map_err(|e| format!("seed {seed}: {e}"))?;
        let summary = run_cooperative(wiring, horizon, false).map_err(|e| format!("seed {seed} stalled: {e}"))?;
        let k = summary.node("engine").map(|n| n.k()).unwrap_or(0);
        if k != 101 {
            return Err(format!("seed {seed}: engine reached {k} callbacks"));
        }
    }
    let elapsed = started.elapsed();
    check(
        elapsed < Duration::from_secs(60),
        format!("200 graphs, 100 engine steps each, in {elapsed:.2?}"),
    )
}

fn transport_contract() -> Outcome {
    const PRODUCERS: usize = 8;
    const CONSUMERS: usize = 3;
    const PER_PRODUCER: u64 = 100_000 / PRODUCERS as u64;
    let started = Instant::now();
    let mut endpoints: Vec<Vec<ChannelEndpoint>> = (0..PRODUCERS)
        .map(|p| {
            vec![ChannelEndpoint {
                node: p,
                output: 0,
                consumers: (0..CONSUMERS)
                    .map(|c| ConsumerRef {
                        node: PRODUCERS + c,
                        input: p,
                        delay: 0.0,
                    })
                    .collect(),
            }]
        })
        .collect();
    endpoints.extend((0..CONSUMERS).map(|_| Vec::new()));
    let (transport, mut receivers) = Transport::new(endpoints, ClockMode::sync(0.0)).map_err(|e| e.to_string())?;
    let consumers: Vec<_> = receivers
        .drain(PRODUCERS..)
        .map(|rx| {
            thread::spawn(move || {
                let mut seen = vec![Vec::new(); PRODUCERS];
                for _ in 0..PRODUCERS as u64 * PER_PRODUCER {
                    match rx.recv() {
                        Ok(Delivery::Message { input, envelope }) => seen[input].push(envelope.seq),
                        _ => break,
                    }
                }
                seen
            })
        })
        .collect();
    thread::scope(|s| {
        for p in 0..PRODUCERS {
            let transport = &transport;
            s.spawn(move || {
                for seq in 0..PER_PRODUCER {
                    let envelope = Envelope {
                        payload: Payload::scalar(seq as f64),
                        seq,
                        sim_time_sent: seq as f64,
                    };
                    transport.publish_output(p, 0, envelope).unwrap();
                }
            });
        }
    });
    let expected: Vec<u64> = (0..PER_PRODUCER).collect();
    let mut intact = true;
    for handle in consumers {
        let seen = handle.join().map_err(|_| "consumer panicked".to_string())?;
        intact &= seen.iter().all(|per_producer| *per_producer == expected);
    }
    transport.shutdown();
    let elapsed = started.elapsed();
    check(
        intact && elapsed < Duration::from_secs(30),
        format!(
            "{} messages to {CONSUMERS} consumers, exactly once and in order: {intact}, {elapsed:.2?}",
            PRODUCERS as u64 * PER_PRODUCER
        ),
    )
}

fn integrator_sanity() -> Outcome {
    let disk = PendulumParams {
        damping: 0.0,
        model: InertiaModel::Disk,
        ..PendulumParams::default()
    };
    let oracle = 2.0 * PI * (disk.inertia() / (disk.mass * disk.gravity * disk.length)).sqrt();
    let mut s = EngineState::new([0.01, 0.0]);
    let mut crossings = Vec::new();
    while crossings.len() < 11 {
        let next = step(&s, StepInputs::default(), &disk, 100.0).map_err(|e| e.to_string())?;
        if s.q[0] < 0.0 && next.q[0] >= 0.0 {
            crossings.push((s.step_index as f64 - s.q[0] / (next.q[0] - s.q[0])) / 100.0);
        }
        s = next;
    }
    let period = (crossings[10] - crossings[0]) / 10.0;
    let period_error = (period / oracle - 1.0).abs();

    let drift = |p: &PendulumParams| -> Result<f64, String> {
        let mut s = EngineState::new([0.1, 0.0]);
        let e0 = p.energy(s.q);
        for _ in 0..1000 {
            s = step(&s, StepInputs::default(), p, 100.0).map_err(|e| e.to_string())?;
        }
        Ok(((p.energy(s.q) - e0) / e0).abs())
    };
    let unit_rod = PendulumParams {
        mass: 1.0,
        length: 1.0,
        gravity: 10.0,
        damping: 0.0,
        model: InertiaModel::Rod,
        ..PendulumParams::default()
    };
    let rod_drift = drift(&unit_rod)?;
    let disk_drift = drift(&disk)?;
    check(
        period_error < 1e-3 && rod_drift < 1e-6,
        format!(
            "period error {period_error:.2e}; energy drift {rod_drift:.2e} on a unit rod (demo disk, informational: {disk_drift:.2e})"
        ),
    )
}

fn domain_randomization() -> Outcome {
    const TARGET: &str = "pendulum/actuators/u";
    let started = Instant::now();
    let concrete = resolve(&demo::filtered_graph().unwrap(), "ode", &Catalog::standard()).map_err(|e| e.to_string())?;
    let mut env = Environment::new(
        concrete,
        NodeRegistry::standard(),
        RunOptions::default(),
        Box::new(PendulumCost::default()),
    )
    .map_err(|e| e.to_string())?;
    let mass = Distribution::Uniform { lo: 0.0297, hi: 0.0363 };
    let volt = Action::from([("volt".to_string(), vec![0.5])]);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut dlo, mut dhi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut constant = true;
    for seed in 0..10_000u64 {
        let config = EpisodeConfig::new(seed, 2)
            .randomize("pendulum/mass", mass.clone())
            .randomize_delay(TARGET, 0.035, 0.005);
        let (_, info) = env.reset(&config).map_err(|e| format!("seed {seed}: {e}"))?;
        let m = info["state:pendulum/mass"];
        let d = info[&format!("delay:{TARGET}")];
        lo = lo.min(m);
        hi = hi.max(m);
        dlo = dlo.min(d);
        dhi = dhi.max(d);
        if seed % 50 == 0 {
            for _ in 0..2 {
                constant &= env.episode_graph().and_then(|g| g.delay_of(TARGET)) == Some(d);
                env.step(&volt).map_err(|e| format!("seed {seed}: {e}"))?;
            }
        }
    }
    env.shutdown();
    let tol = 0.01 * 0.0330;
    let bounds_ok = (lo - 0.0297).abs() <= tol && (hi - 0.0363).abs() <= tol && lo >= 0.0297 && hi <= 0.0363;
    let delays_ok = dlo >= 0.030 && dhi <= 0.040;
    check(
        bounds_ok && delays_ok && constant,
        format!(
            "mass over 10000 resets in [{lo:.5}, {hi:.5}], delay in [{dlo:.5}, {dhi:.5}], constant within episodes: {constant}, {:.1?}",
            started.elapsed()
        ),
    )
}

fn pendulum_graph_parity() -> Outcome {
    let graph = demo::filtered_graph().map_err(|e| e.to_string())?;
    let catalog = Catalog::standard();
    let mut snapshots = Vec::new();
    let mut steps = Vec::new();
    for engine in ["ode", "counter"] {
        let concrete = resolve(&graph, engine, &catalog).map_err(|e| format!("{engine}: {e}"))?;
        let errors: Vec<String> = validate(&concrete).iter().filter(|d| d.is_error()).map(|d| d.to_string()).collect();
        if !errors.is_empty() {
            return Err(format!("{engine}: {}", errors.join("; ")));
        }
        snapshots.push(concrete.agnostic_snapshot());
        let mut env = Environment::new(
            concrete,
            NodeRegistry::standard(),
            RunOptions::default(),
            Box::new(PendulumCost::default()),
        )
        .map_err(|e| format!("{engine}: {e}"))?;
        // 10 s at 20 Hz: the last observation lands at t = 10 s.
        let traj = run_episode(&mut env, &mut ZeroPolicy::new("volt"), &EpisodeConfig::new(0, 199))
            .map_err(|e| format!("{engine}: {e}"))?;
        steps.push(format!("{engine} {} steps to t={:.2}", traj.records.len(), traj.records.last().map_or(0.0, |r| r.sim_time)));
        if traj.records.len() != 199 {
            return Err(steps.join(", "));
        }
    }
    let same = snapshots[0] == snapshots[1];
    check(same, format!("{}; agnostic structure identical: {same}", steps.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("oracle conformance", oracle_conformance),
        ("sync determinism", sync_determinism),
        ("async degradation", async_degradation),
        ("delay parallelization", delay_parallelization),
        ("liveness", liveness),
        ("transport contract", transport_contract),
        ("integrator sanity", integrator_sanity),
        ("domain randomization", domain_randomization),
        ("pendulum graph parity", pendulum_graph_parity),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|e| Err(format!("panicked: {:?}", e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())))));
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
