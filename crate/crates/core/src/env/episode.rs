use std::io::{self, Write};
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{Action, EnvError, Environment, EpisodeConfig, Observation, Policy};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    /// Simulated time of the observation that followed the action.
    pub sim_time: f64,
    pub action: Action,
    pub observation: Observation,
    pub reward: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub seed: u64,
    pub initial: Observation,
    pub records: Vec<StepRecord>,
    /// Hex SHA-256 over every observation, action and reward.
    pub hash: String,
    pub sim_time: f64,
    #[serde(skip)]
    pub wall: Duration,
    pub realized_rtf: f64,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }

    /// First record whose observation is at or after `t`.
    pub fn at_time(&self, t: f64) -> Option<&StepRecord> {
        self.records.iter().find(|r| r.sim_time >= t - 1e-9)
    }

    /// One JSON object per step.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for record in &self.records {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Resets `env` with `config` and steps `policy` until the episode ends.
pub fn run_episode(
    env: &mut Environment,
    policy: &mut dyn Policy,
    config: &EpisodeConfig,
) -> Result<Trajectory, EnvError> {
    policy.reset(config.seed);
    let (initial, info) = env.reset(config)?;
    let mut sim_time = info["sim_time"];
    let mut observation = initial.clone();
    let mut records = Vec::with_capacity(config.max_steps as usize);
    for step in 0..config.max_steps {
        let action = policy.act(step, sim_time, &observation);
        let result = env.step(&action)?;
        sim_time = result.info["sim_time"];
        records.push(StepRecord {
            step,
            sim_time,
            action,
            observation: result.observation.clone(),
            reward: result.reward,
        });
        observation = result.observation;
        if result.terminated || result.truncated {
            break;
        }
    }
    env.shutdown();
    let stats = env.last_episode().expect("episode just finished");
    let hash = episode_hash(&initial, &records);
    Ok(Trajectory {
        seed: config.seed,
        initial,
        records,
        hash,
        sim_time: stats.sim_time,
        wall: stats.wall,
        realized_rtf: stats.realized_rtf(),
    })
}

fn hash_map<'a, I, V>(h: &mut Sha256, entries: I)
where
    I: IntoIterator<Item = (&'a String, &'a V)>,
    V: AsRef<[f64]> + 'a + ?Sized,
{
    let entries: Vec<_> = entries.into_iter().collect();
    h.update((entries.len() as u64).to_le_bytes());
    for (key, values) in entries {
        h.update((key.len() as u64).to_le_bytes());
        h.update(key.as_bytes());
        let values = values.as_ref();
        h.update((values.len() as u64).to_le_bytes());
        for v in values {
            h.update(v.to_bits().to_le_bytes());
        }
    }
}

fn hash_observation(h: &mut Sha256, observation: &Observation) {
    let flat: Vec<(&String, Vec<f64>)> = observation
        .iter()
        .map(|(k, rows)| (k, rows.iter().flatten().copied().collect()))
        .collect();
    hash_map(h, flat.iter().map(|(k, v)| (*k, v)));
}

/// Bit-exact digest of an episode. Equal trajectories always hash alike.
pub fn episode_hash(initial: &Observation, records: &[StepRecord]) -> String {
    let mut h = Sha256::new();
    hash_observation(&mut h, initial);
    for r in records {
        h.update(r.step.to_le_bytes());
        h.update(r.sim_time.to_bits().to_le_bytes());
        hash_map(&mut h, &r.action);
        hash_observation(&mut h, &r.observation);
        h.update(r.reward.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}
