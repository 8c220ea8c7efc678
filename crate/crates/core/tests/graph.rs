use proptest::prelude::*;
use ratesync::demo;
use ratesync::graph::{
    resolve, validate, Catalog, ChannelDecl, ConcreteGraph, DiagCode, EdgeSpec, GraphError, GraphSpec, NodeDecl,
    ObjectDecl, Severity,
};

fn codes(graph: &ConcreteGraph) -> Vec<DiagCode> {
    validate(graph).into_iter().map(|d| d.code).collect()
}

fn filtered(engine: &str) -> ConcreteGraph {
    resolve(&demo::filtered_graph().unwrap(), engine, &Catalog::standard()).unwrap()
}

#[test]
fn engines_share_agnostic_structure() {
    let ode = filtered("ode");
    let counter = filtered("counter");
    assert!(validate(&ode).is_empty());
    assert!(validate(&counter).is_empty());
    assert_eq!(ode.agnostic_snapshot(), counter.agnostic_snapshot());
    assert_ne!(ode.snapshot(), counter.snapshot());
    let names = |g: &ConcreteGraph| g.nodes.iter().map(|n| n.name.clone()).collect::<Vec<_>>();
    assert_eq!(names(&ode), names(&counter));
}

#[test]
fn resolution_snapshot() {
    let snapshot = filtered("ode").snapshot();
    for line in [
        "node engine role=engine kind=ode_engine rate=30",
        "  in pendulum/u <- pendulum/u:out rate=20 delay=0.1 window=1 cyclic=true dim=1",
        "  in y <- lowpass:y rate=15 delay=0 window=1 cyclic=true dim=1",
        "  in th <- pendulum/theta:out rate=60 delay=0 window=2 cyclic=false dim=1",
        "  in in <- lowpass:y rate=15 delay=0 window=1 cyclic=false dim=1",
    ] {
        assert!(snapshot.contains(line), "missing {line:?} in\n{snapshot}");
    }
}

#[test]
fn unknown_engines_are_named() {
    let g = demo::filtered_graph().unwrap();
    assert!(matches!(
        resolve(&g, "bullet", &Catalog::standard()),
        Err(GraphError::UndeclaredEngine { .. })
    ));
    let mut g = g;
    g.add_engine("bullet", g.engines["ode"].clone()).unwrap();
    match resolve(&g, "bullet", &Catalog::standard()) {
        Err(GraphError::UnsupportedEngine { object, available, .. }) => {
            assert_eq!(object, "pendulum");
            assert_eq!(available, vec!["counter".to_string(), "ode".to_string()]);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn conditional_channels_drop_out() {
    let mut g = GraphSpec::new("conditional", 20.0);
    g.add_action("volt", 1).unwrap();
    g.add_observation("th").unwrap();
    g.add_observation("rate").unwrap();
    let mut thetadot = ChannelDecl::new("thetadot", 60.0);
    thetadot.engines = vec!["ode".into()];
    g.add_object(
        ObjectDecl::new("pendulum", "pendulum")
            .sensor(ChannelDecl::new("theta", 60.0))
            .sensor(thetadot)
            .actuator(ChannelDecl::new("u", 20.0)),
    )
    .unwrap();
    for e in ["ode", "counter"] {
        g.add_engine(e, demo::filtered_graph().unwrap().engines["ode"].clone()).unwrap();
    }
    g.connect(EdgeSpec::new("action/volt", "pendulum/actuators/u")).unwrap();
    g.connect(EdgeSpec::new("pendulum/sensors/theta", "observation/th")).unwrap();
    g.connect(EdgeSpec::new("pendulum/sensors/thetadot", "observation/rate")).unwrap();
    let ode = resolve(&g, "ode", &Catalog::standard()).unwrap();
    let counter = resolve(&g, "counter", &Catalog::standard()).unwrap();
    assert!(ode.node("pendulum/thetadot").is_some());
    assert!(counter.node("pendulum/thetadot").is_none());
    assert!(validate(&ode).is_empty());
    // The observation is still declared, so losing its only feed is an error.
    let diags = validate(&counter);
    assert_eq!(diags.len(), 1, "{diags:?}");
    assert_eq!(diags[0].code, DiagCode::DanglingChannel);
    assert_eq!(diags[0].subjects, vec!["env:rate".to_string()]);
}

#[test]
fn every_diagnostic_code_is_reachable() {
    let base = filtered("ode");

    let mut g = base.clone();
    g.nodes.push(g.nodes[2].clone());
    assert!(codes(&g).contains(&DiagCode::DuplicateNode));

    let mut g = base.clone();
    let i = g.index_of("lowpass").unwrap();
    g.nodes[i].rate = 0.0;
    assert!(codes(&g).contains(&DiagCode::NodeRateInvalid));

    let mut g = base.clone();
    g.nodes[i].inputs.clear();
    assert!(codes(&g).contains(&DiagCode::NodeNoInput));

    let mut g = base.clone();
    g.nodes[i].inputs[0].source = None;
    assert!(codes(&g).contains(&DiagCode::DanglingChannel));

    let mut g = base.clone();
    g.nodes[i].inputs[0].dim = 3;
    assert!(codes(&g).contains(&DiagCode::DimMismatch));

    let mut g = base.clone();
    g.nodes[i].inputs[0].rate = 21.0;
    assert!(codes(&g).contains(&DiagCode::ChannelRateMismatch));

    let mut g = base.clone();
    g.nodes[i].inputs[0].window = 0;
    assert!(codes(&g).contains(&DiagCode::EdgeInvalid));

    let mut g = base.clone();
    let env = g.index_of("env").unwrap();
    g.nodes[env].inputs[0].cyclic = false;
    let diags = validate(&g);
    let cycle = diags.iter().find(|d| d.code == DiagCode::CycleWithoutSkip).unwrap();
    assert!(cycle.subjects.iter().any(|s| s.contains("lowpass:y -> env:y")), "{cycle:?}");

    let mut g = base.clone();
    g.nodes[i].rate = 0.1;
    let diags = validate(&g);
    let warning = diags.iter().find(|d| d.code == DiagCode::RateRatioHigh).unwrap();
    assert_eq!(warning.severity, Severity::Warning);

    let mut spec = GraphSpec::new("unused_action", 20.0);
    spec.add_action("volt", 1).unwrap();
    spec.add_action("spare", 1).unwrap();
    spec.add_observation("th").unwrap();
    spec.add_object(
        ObjectDecl::new("pendulum", "pendulum")
            .sensor(ChannelDecl::new("theta", 60.0))
            .actuator(ChannelDecl::new("u", 20.0)),
    )
    .unwrap();
    spec.add_engine("ode", demo::filtered_graph().unwrap().engines["ode"].clone()).unwrap();
    spec.connect(EdgeSpec::new("action/volt", "pendulum/actuators/u")).unwrap();
    spec.connect(EdgeSpec::new("pendulum/sensors/theta", "observation/th")).unwrap();
    let g = resolve(&spec, "ode", &Catalog::standard()).unwrap();
    assert_eq!(codes(&g), vec![DiagCode::ActionUnconnected]);
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for g in [
        demo::filtered_graph().unwrap(),
        demo::direct_graph().unwrap(),
        demo::pipeline_graph(5.0, true).unwrap(),
    ] {
        let path = dir.path().join(format!("{}.toml", g.name));
        g.save(&path).unwrap();
        assert_eq!(GraphSpec::load(&path).unwrap(), g);
    }
}

#[test]
fn loading_rejects_future_versions_and_bad_edges() {
    let text = demo::filtered_graph().unwrap().to_toml();
    let future = text.replacen("version = 1", "version = 2", 1);
    assert!(matches!(GraphSpec::from_toml(&future), Err(GraphError::UnsupportedVersion { .. })));
    let unskipped = text.replacen("skip = true\n", "", 1);
    assert!(matches!(GraphSpec::from_toml(&unskipped), Err(GraphError::CycleWithoutSkip { .. })));
}

#[test]
fn skip_edge_closes_a_node_cycle() {
    let mut g = GraphSpec::new("loop", 10.0);
    g.add_node(NodeDecl::new("a", "mix", 10.0).input("x", 1).output("y", 1)).unwrap();
    g.add_node(NodeDecl::new("b", "mix", 7.0).input("x", 1).output("y", 1)).unwrap();
    g.connect(EdgeSpec::new("a/y", "b/x")).unwrap();
    assert!(g.connect(EdgeSpec::new("b/y", "a/x")).is_err());
    g.connect(EdgeSpec::new("b/y", "a/x").skip()).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn toml_round_trip_is_lossless(seed in any::<u64>()) {
        let g = demo::fuzz_graph(seed).unwrap();
        let back = GraphSpec::from_toml(&g.to_toml()).unwrap();
        prop_assert_eq!(&back, &g);
        let a = resolve(&g, "counter", &Catalog::standard()).unwrap();
        let b = resolve(&back, "counter", &Catalog::standard()).unwrap();
        prop_assert_eq!(a.snapshot(), b.snapshot());
    }
}

#[test]
fn actuator_delay_is_applied_at_the_engine() {
    let mut g = filtered("ode");
    assert_eq!(g.delay_of("pendulum/actuators/u"), Some(0.1));
    assert!(g.set_delay("pendulum/actuators/u", 0.035));
    let engine = g.engine_node().unwrap();
    assert_eq!(engine.inputs[0].delay, 0.035);
    assert_eq!(g.node("pendulum/u").unwrap().inputs[0].delay, 0.0);
    assert!(g.agnostic_snapshot().contains("edge lowpass/y -> pendulum/actuators/u delay=0.035"));
    assert!(!g.set_delay("nowhere/x", 0.1));
}
