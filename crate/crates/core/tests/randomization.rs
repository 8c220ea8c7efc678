use std::time::{Duration, Instant};

use ratesync::demo;
use ratesync::env::{Action, Distribution, EnvError, Environment, EpisodeConfig, PendulumCost};
use ratesync::executor::RunOptions;
use ratesync::graph::{resolve, Catalog};
use ratesync::nodes::NodeRegistry;

const MASS: Distribution = Distribution::Uniform { lo: 0.0297, hi: 0.0363 };

fn filtered_env() -> Environment {
    let concrete = resolve(&demo::filtered_graph().unwrap(), "ode", &Catalog::standard()).unwrap();
    Environment::new(concrete, NodeRegistry::standard(), RunOptions::default(), Box::new(PendulumCost::default()))
        .unwrap()
}

#[test]
fn samples_cover_the_configured_interval() {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for seed in 0..10_000 {
        let config = EpisodeConfig::new(seed, 1).randomize("pendulum/mass", MASS.clone());
        let mass = config.sample().states["pendulum/mass"];
        assert!((0.0297..=0.0363).contains(&mass));
        lo = lo.min(mass);
        hi = hi.max(mass);
    }
    let width = 0.0363 - 0.0297;
    assert!(lo - 0.0297 < 0.01 * width && 0.0363 - hi < 0.01 * width, "[{lo}, {hi}]");
}

#[test]
fn sampling_is_seeded() {
    let config = EpisodeConfig::new(3, 1)
        .randomize("pendulum/mass", MASS.clone())
        .randomize_delay("pendulum/actuators/u", 0.035, 0.005);
    assert_eq!(config.sample(), config.sample());
    let other = EpisodeConfig { seed: 4, ..config.clone() };
    assert_ne!(config.sample(), other.sample());
}

#[test]
fn resets_apply_sampled_mass_and_delay() {
    let mut env = filtered_env();
    let volt = Action::from([("volt".to_string(), vec![0.5])]);
    let started = Instant::now();
    for seed in 0..200 {
        let config = EpisodeConfig::new(seed, 3)
            .randomize("pendulum/mass", MASS.clone())
            .randomize_delay("pendulum/actuators/u", 0.035, 0.005);
        let (_, info) = env.reset(&config).unwrap();
        let mass = info["state:pendulum/mass"];
        let delay = info["delay:pendulum/actuators/u"];
        assert!((0.0297..=0.0363).contains(&mass));
        assert!((0.030..=0.040).contains(&delay));
        for _ in 0..3 {
            assert_eq!(env.episode_graph().unwrap().delay_of("pendulum/actuators/u"), Some(delay));
            env.step(&volt).unwrap();
        }
    }
    assert!(started.elapsed() < Duration::from_secs(60));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut env = filtered_env();
    let inverted = EpisodeConfig::new(0, 5).randomize("pendulum/mass", Distribution::Uniform { lo: 0.04, hi: 0.03 });
    assert!(matches!(env.reset(&inverted), Err(EnvError::Config(_))));
    let negative = EpisodeConfig::new(0, 5).randomize_delay("pendulum/actuators/u", 0.004, 0.005);
    assert!(matches!(env.reset(&negative), Err(EnvError::Config(_))));
    let nowhere = EpisodeConfig::new(0, 5).randomize_delay("pendulum/actuators/nope", 0.035, 0.005);
    assert_eq!(env.reset(&nowhere), Err(EnvError::UnknownDelayTarget("pendulum/actuators/nope".into())));
    assert!(matches!(env.reset(&EpisodeConfig::new(0, 0)), Err(EnvError::Config(_))));
}

#[test]
fn configs_parse_from_toml() {
    let text = r#"
        seed = 11
        max_steps = 200

        [[randomizations]]
        state = "pendulum/mass"
        distribution = { kind = "uniform", lo = 0.0297, hi = 0.0363 }

        [[delay_randomization]]
        target = "pendulum/actuators/u"
        base = 0.035
        half_width = 0.005
    "#;
    let config: EpisodeConfig = toml::from_str(text).unwrap();
    assert_eq!(config.randomizations[0].distribution, MASS);
    assert_eq!(config.delay_randomization[0].half_width, 0.005);
    config.validate().unwrap();
}
