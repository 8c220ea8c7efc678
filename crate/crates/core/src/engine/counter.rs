use crate::graph::NodeSpec;
use crate::node::{CallbackContext, NodeBehavior, NodeError, StateValues};
use crate::nodes::BuildError;
use crate::transport::Payload;

struct Tally {
    u_input: Option<usize>,
    steps: f64,
    sum: f64,
}

/// Engine whose per-object state is `[steps taken, running sum of u]`.
/// It has no physics, which makes it a cheap engine for protocol tests.
pub struct CounterEngine {
    tallies: Vec<Tally>,
}

impl CounterEngine {
    pub fn from_spec(spec: &NodeSpec) -> Result<Self, BuildError> {
        let mut tallies = Vec::new();
        for out in &spec.outputs {
            let name = out
                .name
                .strip_suffix("/state")
                .ok_or_else(|| BuildError::param(spec, &out.name, "engine outputs must be named <object>/state"))?;
            if out.dim != 2 {
                return Err(BuildError::param(spec, &out.name, "counter state has dimension 2"));
            }
            tallies.push(Tally {
                u_input: spec.inputs.iter().position(|c| c.name == format!("{name}/u")),
                steps: 0.0,
                sum: 0.0,
            });
        }
        Ok(CounterEngine { tallies })
    }
}

impl NodeBehavior for CounterEngine {
    fn reset(&mut self, _: &StateValues) -> Result<(), NodeError> {
        for t in &mut self.tallies {
            t.steps = 0.0;
            t.sum = 0.0;
        }
        Ok(())
    }

    fn callback(&mut self, ctx: &CallbackContext<'_>) -> Result<Vec<Payload>, NodeError> {
        Ok(self
            .tallies
            .iter_mut()
            .map(|t| {
                if ctx.k > 0 {
                    t.steps += 1.0;
                    t.sum += t.u_input.map_or(0.0, |i| ctx.inputs[i].latest().first());
                }
                Payload::new(vec![t.steps, t.sum])
            })
            .collect())
    }
}
