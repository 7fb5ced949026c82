//! Scripted offline data.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::buffer::Transition;
use super::env::{Env, EnvKind, SparseReach};
use crate::error::{contract, Error, Result};
use crate::Rng;

pub const GENERATOR_VERSION: u32 = 1;
/// Minimum fraction of successful episodes in a reaching dataset.
pub const MIN_SUCCESS_COVERAGE: f64 = 0.3;
const MAX_ATTEMPTS: u64 = 5;

/// First line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub env: EnvKind,
    pub seed: u64,
    pub generator_version: u32,
    pub episodes: usize,
    pub chunk: usize,
    /// Seed actually used after coverage retries.
    pub effective_seed: u64,
    pub success_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub transitions: Vec<Transition>,
}

/// Stochastic scripted behavior. Bandit: a uniformly chosen peak plus
/// `N(0, 0.2²)` noise. Reaching: with probability 0.2 a uniform random
/// action, otherwise a proportional controller toward the goal plus
/// `N(0, 0.3²)` noise. Actions are clipped to `[−1, 1]`.
fn behavior_action(kind: EnvKind, state: &[f64], rng: &mut Rng) -> [f64; 2] {
    match kind {
        EnvKind::Bandit => {
            let c = if rng.uniform() < 0.5 { 0.6 } else { -0.6 };
            [
                (c + 0.2 * rng.standard_normal()).clamp(-1.0, 1.0),
                (c + 0.2 * rng.standard_normal()).clamp(-1.0, 1.0),
            ]
        }
        EnvKind::Reach => {
            if rng.uniform() < 0.2 {
                return [rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)];
            }
            let g = SparseReach::default().goal_of(state);
            let mut a = [0.0; 2];
            for k in 0..2 {
                a[k] = ((g[k] - state[k]) * 5.0 + 0.3 * rng.standard_normal()).clamp(-1.0, 1.0);
            }
            a
        }
    }
}

fn rollout(
    kind: EnvKind,
    env: &dyn Env,
    chunk: usize,
    episodes: usize,
    rng: &mut Rng,
) -> (Vec<Transition>, f64) {
    let base = kind.build();
    let mut out = Vec::new();
    let mut successes = 0;
    for _ in 0..episodes {
        let mut s = env.reset(rng);
        for _ in 0..env.max_episode_steps() {
            // open-loop chunk: sub-actions planned along the noise-free path
            let mut a = Vec::with_capacity(2 * chunk);
            let mut plan = s.clone();
            for _ in 0..chunk {
                let sub = behavior_action(kind, &plan, rng);
                a.extend_from_slice(&sub);
                if kind == EnvKind::Reach {
                    plan = base.step(&plan, &sub, &mut Rng::new(0)).state;
                }
            }
            let step = env.step(&s, &a, rng);
            out.push(Transition {
                s: s.clone(),
                a,
                r: step.reward,
                s_next: step.state.clone(),
                done: step.done,
            });
            s = step.state;
            if step.success {
                successes += 1;
            }
            if step.done {
                break;
            }
        }
    }
    (out, successes as f64 / episodes as f64)
}

/// Generates `episodes` behavior episodes. A reaching dataset whose success
/// rate is at most 30% is regenerated from a derived seed, up to 5 times.
pub fn make_offline_dataset(
    kind: EnvKind,
    chunk: usize,
    gamma: f64,
    seed: u64,
    episodes: usize,
) -> Result<Dataset> {
    if episodes == 0 {
        return Err(contract("offline dataset needs at least one episode"));
    }
    let env = kind.build_chunked(chunk, gamma)?;
    let root = Rng::new(seed);
    let mut last = 0.0;
    for attempt in 0..MAX_ATTEMPTS {
        let effective_seed = if attempt == 0 {
            seed
        } else {
            root.fork(attempt).seed()
        };
        let mut rng = Rng::new(effective_seed);
        let (transitions, success_rate) =
            rollout(kind, env.as_ref(), chunk.max(1), episodes, &mut rng);
        last = success_rate;
        if kind == EnvKind::Bandit || success_rate > MIN_SUCCESS_COVERAGE {
            let header = DatasetHeader {
                env: kind,
                seed,
                generator_version: GENERATOR_VERSION,
                episodes,
                chunk: chunk.max(1),
                effective_seed,
                success_rate,
            };
            return Ok(Dataset {
                header,
                transitions,
            });
        }
    }
    Err(Error::Format(format!(
        "offline {kind} data reached only {:.1}% successful episodes after {MAX_ATTEMPTS} attempts",
        100.0 * last
    )))
}

impl Dataset {
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut w, &self.header)?;
        writeln!(w)?;
        for t in &self.transitions {
            serde_json::to_writer(&mut w, t)?;
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Format("empty dataset file".into()))??;
        let header: DatasetHeader = serde_json::from_str(&first)?;
        let mut transitions = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                transitions.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self {
            header,
            transitions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandit_actions_are_bimodal_and_bounded() {
        let d = make_offline_dataset(EnvKind::Bandit, 1, 0.99, 0, 2000).unwrap();
        let n = d.transitions.len() as f64;
        let upper = d
            .transitions
            .iter()
            .filter(|t| t.a[0] + t.a[1] > 0.0)
            .count() as f64
            / n;
        assert!(upper >= 0.3 && 1.0 - upper >= 0.3, "{upper}");
        assert!(d
            .transitions
            .iter()
            .all(|t| t.a.iter().all(|x| x.abs() <= 1.0) && t.done));
    }

    #[test]
    fn reach_coverage_gate() {
        let d = make_offline_dataset(EnvKind::Reach, 1, 0.99, 0, 100).unwrap();
        assert!(d.header.success_rate > MIN_SUCCESS_COVERAGE);
        assert!(d
            .transitions
            .iter()
            .all(|t| t.a.iter().all(|x| x.abs() <= 1.0)));
    }

    #[test]
    fn chunked_reach_emits_wide_actions() {
        let d = make_offline_dataset(EnvKind::Reach, 3, 0.99, 1, 20).unwrap();
        assert!(d.transitions.iter().all(|t| t.a.len() == 6));
    }

    #[test]
    fn same_seed_same_data() {
        let a = make_offline_dataset(EnvKind::Reach, 1, 0.99, 7, 10).unwrap();
        let b = make_offline_dataset(EnvKind::Reach, 1, 0.99, 7, 10).unwrap();
        assert_eq!(a, b);
    }
}
