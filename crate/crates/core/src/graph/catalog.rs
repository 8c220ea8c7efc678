use std::collections::BTreeMap;

use super::PortDecl;

/// A sensor exposed by an object under one engine: a slice of the engine's
/// per-object state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorBinding {
    pub name: String,
    pub dim: usize,
    /// First state component reported.
    pub index: usize,
    /// Report angles wrapped to (-pi, pi].
    pub wrap: bool,
}

/// How an object is realized under one engine.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineBinding {
    pub sensors: Vec<SensorBinding>,
    pub actuators: Vec<PortDecl>,
    pub state_dim: usize,
    /// Object parameters the engine registers as per-episode states.
    pub states: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectType {
    pub kind: String,
    pub engines: BTreeMap<String, EngineBinding>,
}

/// Known object types and the node kind implementing each engine.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    objects: BTreeMap<String, ObjectType>,
    engine_kinds: BTreeMap<String, String>,
}

impl Catalog {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The pendulum object under the `ode` and `counter` engines.
    pub fn standard() -> Self {
        let mut catalog = Catalog::empty();
        catalog.register_engine("ode", "ode_engine");
        catalog.register_engine("counter", "counter_engine");

        let sensors = vec![
            SensorBinding {
                name: "theta".into(),
                dim: 1,
                index: 0,
                wrap: true,
            },
            SensorBinding {
                name: "thetadot".into(),
                dim: 1,
                index: 1,
                wrap: false,
            },
        ];
        let actuators = vec![PortDecl::new("u", 1), PortDecl::new("disturbance", 1)];
        let ode = EngineBinding {
            sensors: sensors.clone(),
            actuators: actuators.clone(),
            state_dim: 2,
            states: [
                "mass",
                "length",
                "damping",
                "torque_gain",
                "gravity",
                "theta0",
                "thetadot0",
            ]
            .map(String::from)
            .to_vec(),
        };
        // The counter engine reports [steps taken, running sum of u].
        let counter = EngineBinding {
            sensors: sensors
                .into_iter()
                .map(|s| SensorBinding { wrap: false, ..s })
                .collect(),
            actuators,
            state_dim: 2,
            states: Vec::new(),
        };
        catalog.register_object(ObjectType {
            kind: "pendulum".into(),
            engines: BTreeMap::from([("ode".into(), ode), ("counter".into(), counter)]),
        });
        catalog
    }

    pub fn register_engine(&mut self, engine: &str, node_kind: &str) {
        self.engine_kinds.insert(engine.into(), node_kind.into());
    }

    pub fn register_object(&mut self, object: ObjectType) {
        self.objects.insert(object.kind.clone(), object);
    }

    pub fn object(&self, kind: &str) -> Option<&ObjectType> {
        self.objects.get(kind)
    }

    pub fn engine_kind(&self, engine: &str) -> Option<&str> {
        self.engine_kinds.get(engine).map(String::as_str)
    }

    pub fn engines(&self) -> impl Iterator<Item = &str> {
        self.engine_kinds.keys().map(String::as_str)
    }
}
