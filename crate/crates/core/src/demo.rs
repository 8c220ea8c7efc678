//! Ready-made pendulum graphs used by the examples, the CLI and the tests.

use std::collections::BTreeMap;

use crate::graph::{ChannelDecl, EdgeSpec, EngineDecl, GraphError, GraphSpec, NodeDecl, ObjectDecl};

pub const ENV_RATE: f64 = 20.0;
pub const ENGINE_RATE: f64 = 30.0;
pub const SENSOR_RATE: f64 = 60.0;
pub const ACTUATOR_RATE: f64 = 20.0;

/// Delay on the filtered command before it reaches the actuator.
pub const FILTER_DELAY: f64 = 0.1;

fn pendulum(sensor_rate: f64, actuator_rate: f64) -> ObjectDecl {
    ObjectDecl::new("pendulum", "pendulum")
        .sensor(ChannelDecl::new("theta", sensor_rate))
        .sensor(ChannelDecl::new("thetadot", sensor_rate))
        .actuator(ChannelDecl::new("u", actuator_rate))
}

fn engine(rate: f64) -> EngineDecl {
    EngineDecl {
        rate,
        params: BTreeMap::new(),
    }
}

/// Low-pass filtered pendulum: action `volt` passes through a 15 Hz filter
/// and a 0.1 s delay before the actuator. Observes the filter output `y`
/// and two-sample windows of `th` and `thdot`. Runs under `ode` or
/// `counter`.
pub fn filtered_graph() -> Result<GraphSpec, GraphError> {
    let mut g = GraphSpec::new("filtered_pendulum", ENV_RATE);
    g.add_action("volt", 1)?;
    for obs in ["y", "th", "thdot"] {
        g.add_observation(obs)?;
    }
    g.add_node(
        NodeDecl::new("lowpass", "lowpass", 15.0)
            .input("u", 1)
            .output("y", 1)
            .param("cutoff", 7.0),
    )?;
    g.add_object(pendulum(SENSOR_RATE, ACTUATOR_RATE))?;
    g.add_engine("ode", engine(ENGINE_RATE))?;
    g.add_engine("counter", engine(ENGINE_RATE))?;
    g.connect(EdgeSpec::new("action/volt", "lowpass/u"))?;
    g.connect(EdgeSpec::new("lowpass/y", "pendulum/actuators/u").delay(FILTER_DELAY))?;
    g.connect(EdgeSpec::new("lowpass/y", "observation/y").skip())?;
    g.connect(EdgeSpec::new("pendulum/sensors/theta", "observation/th").window(2))?;
    g.connect(EdgeSpec::new("pendulum/sensors/thetadot", "observation/thdot").window(2))?;
    Ok(g)
}

/// Action `volt` drives the actuator directly.
pub fn direct_graph() -> Result<GraphSpec, GraphError> {
    let mut g = GraphSpec::new("direct_pendulum", ENV_RATE);
    g.add_action("volt", 1)?;
    g.add_observation("th")?;
    g.add_observation("thdot")?;
    g.add_object(pendulum(SENSOR_RATE, ACTUATOR_RATE))?;
    g.add_engine("ode", engine(ENGINE_RATE))?;
    g.add_engine("counter", engine(ENGINE_RATE))?;
    g.connect(EdgeSpec::new("action/volt", "pendulum/actuators/u"))?;
    g.connect(EdgeSpec::new("pendulum/sensors/theta", "observation/th").window(2))?;
    g.connect(EdgeSpec::new("pendulum/sensors/thetadot", "observation/thdot").window(2))?;
    Ok(g)
}

/// Closed loop without an environment: a PD controller and the engine,
/// each with `cost_ms` of injected work per callback. The loop is broken
/// on the sensor to controller edges. With `pipelined` the controller
/// output is delayed one period so engine step k and controller step k
/// are independent and can overlap.
pub fn pipeline_graph(cost_ms: f64, pipelined: bool) -> Result<GraphSpec, GraphError> {
    let mut g = GraphSpec::new(if pipelined { "pipelined_loop" } else { "serial_loop" }, ENGINE_RATE);
    let mut object = pendulum(ENGINE_RATE, ENGINE_RATE).param("theta0", 0.5);
    object.skip_engine_inputs = false;
    g.add_object(object)?;
    g.add_node(
        NodeDecl::new("controller", "pd", ENGINE_RATE)
            .input("theta", 1)
            .input("thetadot", 1)
            .output("u", 1)
            .param("kp", 2.0)
            .param("kd", 0.1)
            .param("limit", 2.0)
            .param("cost_ms", cost_ms),
    )?;
    let mut e = engine(ENGINE_RATE);
    e.params.insert("cost_ms".into(), cost_ms);
    g.add_engine("ode", e)?;
    g.connect(EdgeSpec::new("pendulum/sensors/theta", "controller/theta").skip())?;
    g.connect(EdgeSpec::new("pendulum/sensors/thetadot", "controller/thetadot").skip())?;
    let delay = if pipelined { 1.0 / ENGINE_RATE } else { 0.0 };
    g.connect(EdgeSpec::new("controller/u", "pendulum/actuators/u").delay(delay))?;
    Ok(g)
}

/// A random valid graph around a pendulum under the `counter` engine.
///
/// Rates are drawn on a 1 mHz grid in [1, 200] Hz. Every node has a forward
/// input; extra back edges close cycles and always skip. The engine loop is
/// closed through the object's cyclic actuator input.
pub fn fuzz_graph(seed: u64) -> Result<GraphSpec, GraphError> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let rate = |rng: &mut rand_chacha::ChaCha8Rng| rng.random_range(1_000u32..=200_000) as f64 / 1000.0;
    let n = rng.random_range(2usize..=6);
    let rates: Vec<f64> = (0..n).map(|_| rate(&mut rng)).collect();

    // (source node, target node, skip, delay in source periods); source
    // None is the theta sensor.
    let mut edges: Vec<(Option<usize>, usize, bool, f64)> = vec![(None, 0, false, 0.0)];
    for i in 1..n {
        let from = rng.random_range(0..i);
        edges.push((Some(from), i, false, rng.random_range(0.0..2.0)));
    }
    for _ in 0..rng.random_range(1..=n) {
        let from = rng.random_range(1..n);
        let to = rng.random_range(0..from);
        edges.push((Some(from), to, true, rng.random_range(0.0..2.0)));
    }

    let mut g = GraphSpec::new(&format!("fuzz_{seed}"), 1.0);
    let object = ObjectDecl::new("pendulum", "pendulum")
        .sensor(ChannelDecl::new("theta", rate(&mut rng)))
        .actuator(ChannelDecl::new("u", rate(&mut rng)));
    g.add_object(object)?;
    g.add_engine("counter", engine(rate(&mut rng)))?;
    for (i, f) in rates.iter().enumerate() {
        let mut node = NodeDecl::new(&format!("n{i}"), "mix", *f).output("y", 1);
        for (j, _) in edges.iter().enumerate().filter(|(_, e)| e.1 == i) {
            node = node.input(&format!("in{j}"), 1);
        }
        g.add_node(node)?;
    }
    for (j, &(from, to, skip, periods)) in edges.iter().enumerate() {
        let (source, delay) = match from {
            None => ("pendulum/sensors/theta".to_string(), 0.0),
            Some(s) => (format!("n{s}/y"), periods / rates[s]),
        };
        let mut edge = EdgeSpec::new(&source, &format!("n{to}/in{j}")).delay(delay);
        if skip {
            edge = edge.skip();
        }
        g.connect(edge)?;
    }
    let last = rng.random_range(0..n);
    g.connect(EdgeSpec::new(&format!("n{last}/y"), "pendulum/actuators/u"))?;
    Ok(g)
}
