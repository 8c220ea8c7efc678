use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use ratesync::demo;
use ratesync::engine::{step, EngineState, InertiaModel, OdeEngine, PendulumParams, StepInputs};
use ratesync::executor::run_cooperative;
use ratesync::graph::{resolve, Catalog, ChannelDecl, EdgeSpec, GraphSpec, NodeDecl, ObjectDecl};
use ratesync::node::{CallbackContext, InputView, NodeBehavior, NodeError, StateValues};
use ratesync::nodes::{build_wiring, NodeRegistry};
use ratesync::transport::Payload;

fn undamped(model: InertiaModel) -> PendulumParams {
    PendulumParams {
        damping: 0.0,
        model,
        ..PendulumParams::default()
    }
}

/// Period from upward zero crossings of theta, linearly interpolated.
fn measured_period(params: &PendulumParams, rate: f64, periods: usize) -> f64 {
    let mut s = EngineState::new([0.01, 0.0]);
    let mut crossings = Vec::new();
    while crossings.len() < periods + 1 {
        let next = step(&s, StepInputs::default(), params, rate).unwrap();
        if s.q[0] < 0.0 && next.q[0] >= 0.0 {
            let frac = -s.q[0] / (next.q[0] - s.q[0]);
            crossings.push((s.step_index as f64 + frac) / rate);
        }
        s = next;
    }
    (crossings[periods] - crossings[0]) / periods as f64
}

#[test]
fn small_angle_period_matches_linearized_oracle() {
    for model in [InertiaModel::Disk, InertiaModel::Rod] {
        let p = undamped(model);
        let oracle = 2.0 * PI * (p.inertia() / (p.mass * p.gravity * p.length)).sqrt();
        let measured = measured_period(&p, 100.0, 10);
        assert!((measured / oracle - 1.0).abs() < 1e-3, "{model:?}: {measured} vs {oracle}");
    }
}

fn energy_drift(p: &PendulumParams, theta0: f64) -> f64 {
    let mut s = EngineState::new([theta0, 0.0]);
    let e0 = p.energy(s.q);
    for _ in 0..1000 {
        s = step(&s, StepInputs::default(), p, 100.0).unwrap();
    }
    ((p.energy(s.q) - e0) / e0).abs()
}

#[test]
fn energy_drift_per_thousand_steps() {
    let rod = PendulumParams {
        mass: 1.0,
        length: 1.0,
        gravity: 10.0,
        damping: 0.0,
        model: InertiaModel::Rod,
        ..PendulumParams::default()
    };
    assert!(energy_drift(&rod, 0.1) < 1e-6, "{}", energy_drift(&rod, 0.1));
    // The demo disk is stiffer (omega h ~ 0.1), where RK4's O((omega h)^6)
    // per-step energy loss accumulates to about 1.3e-5.
    let disk = energy_drift(&undamped(InertiaModel::Disk), 0.1);
    assert!(disk > 1e-6 && disk < 2e-5, "{disk}");
}

#[test]
fn reset_values_reach_the_dynamics() {
    let concrete = resolve(&demo::direct_graph().unwrap(), "ode", &Catalog::standard()).unwrap();
    let mut engine = OdeEngine::from_spec(concrete.engine_node().unwrap()).unwrap();
    let values = StateValues::from([("pendulum/mass".to_string(), 0.04), ("pendulum/theta0".to_string(), 0.2)]);
    engine.reset(&values).unwrap();

    let window = [Payload::scalar(1.5)];
    let inputs = [InputView {
        name: "pendulum/u",
        consumed: &[],
        window: &window,
    }];
    let ctx = |k| CallbackContext {
        node: "engine",
        k,
        sim_time: k as f64 / 30.0,
        inputs: &inputs,
    };
    assert_eq!(engine.callback(&ctx(0)).unwrap()[0].values(), &[0.2, 0.0]);
    let got = engine.callback(&ctx(1)).unwrap();

    let params = PendulumParams {
        mass: 0.04,
        ..PendulumParams::default()
    };
    let want = step(&EngineState::new([0.2, 0.0]), StepInputs { u: 1.5, disturbance: 0.0 }, &params, 30.0).unwrap();
    assert_eq!(got[0].values(), &want.q);
}

/// Emits 1 and records the counter engine's running sum of u.
struct Probe(Arc<Mutex<Vec<f64>>>);

impl NodeBehavior for Probe {
    fn callback(&mut self, ctx: &CallbackContext<'_>) -> Result<Vec<Payload>, NodeError> {
        self.0.lock().unwrap().push(ctx.inputs[0].latest().first());
        Ok(vec![Payload::scalar(1.0)])
    }
}

#[test]
fn delayed_actuator_leaves_first_steps_at_default() {
    let mut g = GraphSpec::new("delayed", 30.0);
    g.add_object(
        ObjectDecl::new("pendulum", "pendulum")
            .sensor(ChannelDecl::new("thetadot", 30.0))
            .actuator(ChannelDecl::new("u", 30.0)),
    )
    .unwrap();
    g.add_engine("counter", demo::direct_graph().unwrap().engines["ode"].clone()).unwrap();
    g.add_node(NodeDecl::new("probe", "probe", 30.0).input("sum", 1).output("u", 1)).unwrap();
    g.connect(EdgeSpec::new("pendulum/sensors/thetadot", "probe/sum").skip()).unwrap();
    g.connect(EdgeSpec::new("probe/u", "pendulum/actuators/u").delay(0.1)).unwrap();
    let concrete = resolve(&g, "counter", &Catalog::standard()).unwrap();

    let sums = Arc::new(Mutex::new(Vec::new()));
    let mut registry = NodeRegistry::standard();
    let shared = Arc::clone(&sums);
    registry.register("probe", move |_| Ok(Box::new(Probe(Arc::clone(&shared)))));
    let wiring = build_wiring(&concrete, &registry).unwrap();
    run_cooperative(wiring, 1.0, false).unwrap();

    // Probe k reads the engine output of callback k - 1, so increments[j]
    // is the u applied by engine callback j. Callbacks 0, 1 and 2 run before
    // the first delayed command is due.
    let sums = sums.lock().unwrap().clone();
    let increments: Vec<f64> = sums.windows(2).map(|w| w[1] - w[0]).collect();
    assert_eq!(&increments[..3], &[0.0, 0.0, 0.0], "{sums:?}");
    assert!(increments[3..].iter().all(|&d| d == 1.0), "{sums:?}");
}
