//! Toy control tasks with sparse completion rewards.
//!
//! Environments are stateless: the full state is the observation, so
//! `step` maps `(state, action)` to the next state. Rewards are −1 until the
//! task is completed and 0 on the completing step, which also terminates
//! the episode. Running out of steps is a truncation handled by the caller.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Rng;

/// Result of one environment transition.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub reward: f64,
    /// Terminated: the bootstrap is masked for this transition.
    pub done: bool,
    pub success: bool,
    /// Primitive steps consumed; more than one only for chunked actions.
    pub substeps: usize,
}

pub trait Env {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    /// Width of the action the policy emits, in `[−1, 1]`.
    fn action_dim(&self) -> usize;
    fn max_episode_steps(&self) -> usize;
    fn reset(&self, rng: &mut Rng) -> Vec<f64>;
    fn step(&self, state: &[f64], action: &[f64], rng: &mut Rng) -> StepOutcome;
}

/// Single-step task whose reward surface has two equally good peaks.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiModalBandit {
    pub centers: [[f64; 2]; 2],
    pub width: f64,
}

impl Default for MultiModalBandit {
    fn default() -> Self {
        Self {
            centers: [[0.6, 0.6], [-0.6, -0.6]],
            width: 0.15,
        }
    }
}

/// A bandit pull counts as a success above this reward.
pub const BANDIT_SUCCESS_REWARD: f64 = -0.05;

impl MultiModalBandit {
    /// `max_c exp(−‖a − c‖²/2w²) − 1`, in `[−1, 0]`.
    pub fn reward(&self, a: &[f64]) -> f64 {
        let w2 = 2.0 * self.width * self.width;
        self.centers
            .iter()
            .map(|c| {
                let d2 = (a[0] - c[0]).powi(2) + (a[1] - c[1]).powi(2);
                (-d2 / w2).exp()
            })
            .fold(0.0, f64::max)
            - 1.0
    }
}

impl Env for MultiModalBandit {
    fn name(&self) -> &str {
        "bandit"
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn max_episode_steps(&self) -> usize {
        1
    }

    fn reset(&self, _: &mut Rng) -> Vec<f64> {
        vec![0.0]
    }

    fn step(&self, state: &[f64], action: &[f64], _: &mut Rng) -> StepOutcome {
        let reward = self.reward(action);
        StepOutcome {
            state: state.to_vec(),
            reward,
            done: true,
            success: reward > BANDIT_SUCCESS_REWARD,
            substeps: 1,
        }
    }
}

/// Point mass in `[−1, 1]²` that must reach one of two goals. The state is
/// `(x, y, g₀, g₁)` with a one-hot goal index; actions are velocities
/// scaled by `speed`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseReach {
    pub goals: [[f64; 2]; 2],
    pub speed: f64,
    pub tolerance: f64,
    pub horizon: usize,
    pub start_spread: f64,
}

impl Default for SparseReach {
    fn default() -> Self {
        Self {
            goals: [[0.6, 0.6], [-0.6, 0.6]],
            speed: 0.1,
            tolerance: 0.1,
            horizon: 50,
            start_spread: 0.1,
        }
    }
}

impl SparseReach {
    pub fn goal_of(&self, state: &[f64]) -> [f64; 2] {
        if state[2] >= state[3] {
            self.goals[0]
        } else {
            self.goals[1]
        }
    }

    pub fn distance_to_goal(&self, state: &[f64]) -> f64 {
        let g = self.goal_of(state);
        ((state[0] - g[0]).powi(2) + (state[1] - g[1]).powi(2)).sqrt()
    }
}

impl Env for SparseReach {
    fn name(&self) -> &str {
        "reach"
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn max_episode_steps(&self) -> usize {
        self.horizon
    }

    fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        let goal = rng.below(2);
        let x = rng.uniform_range(-self.start_spread, self.start_spread);
        let y = rng.uniform_range(-self.start_spread, self.start_spread);
        vec![x, y, f64::from(goal == 0), f64::from(goal == 1)]
    }

    fn step(&self, state: &[f64], action: &[f64], _: &mut Rng) -> StepOutcome {
        let mut next = state.to_vec();
        for k in 0..2 {
            next[k] = (state[k] + self.speed * action[k].clamp(-1.0, 1.0)).clamp(-1.0, 1.0);
        }
        let success = self.distance_to_goal(&next) <= self.tolerance;
        StepOutcome {
            state: next,
            reward: if success { 0.0 } else { -1.0 },
            done: success,
            success,
            substeps: 1,
        }
    }
}

/// Executes `h` consecutive sub-actions per policy action and returns the
/// discounted reward sum. A termination inside the chunk skips the rest.
pub struct ChunkAdapter<E> {
    pub inner: E,
    pub h: usize,
    pub gamma: f64,
}

impl<E: Env> ChunkAdapter<E> {
    pub fn new(inner: E, h: usize, gamma: f64) -> Result<Self> {
        if h == 0 {
            return Err(crate::error::contract("chunk length must be at least 1"));
        }
        Ok(Self { inner, h, gamma })
    }
}

impl<E: Env> Env for ChunkAdapter<E> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.inner.action_dim() * self.h
    }

    fn max_episode_steps(&self) -> usize {
        self.inner.max_episode_steps().div_ceil(self.h)
    }

    fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        self.inner.reset(rng)
    }

    fn step(&self, state: &[f64], action: &[f64], rng: &mut Rng) -> StepOutcome {
        let m = self.inner.action_dim();
        let mut state = state.to_vec();
        let mut reward = 0.0;
        let mut discount = 1.0;
        let mut substeps = 0;
        for sub in action.chunks(m) {
            let out = self.inner.step(&state, sub, rng);
            reward += discount * out.reward;
            discount *= self.gamma;
            substeps += 1;
            state = out.state;
            if out.done {
                return StepOutcome {
                    state,
                    reward,
                    done: true,
                    success: out.success,
                    substeps,
                };
            }
        }
        StepOutcome {
            state,
            reward,
            done: false,
            success: false,
            substeps,
        }
    }
}

/// Named task selector used by configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Bandit,
    Reach,
}

impl EnvKind {
    pub fn build(self) -> Box<dyn Env> {
        match self {
            EnvKind::Bandit => Box::new(MultiModalBandit::default()),
            EnvKind::Reach => Box::new(SparseReach::default()),
        }
    }

    /// Chunked version; `h = 1` returns the plain task.
    pub fn build_chunked(self, h: usize, gamma: f64) -> Result<Box<dyn Env>> {
        if h <= 1 {
            return Ok(self.build());
        }
        Ok(match self {
            EnvKind::Bandit => Box::new(ChunkAdapter::new(MultiModalBandit::default(), h, gamma)?),
            EnvKind::Reach => Box::new(ChunkAdapter::new(SparseReach::default(), h, gamma)?),
        })
    }

    /// Candidates per decision: 16 for the bandit, 32 for reaching.
    pub fn default_best_of_n(self) -> usize {
        match self {
            EnvKind::Bandit => 16,
            EnvKind::Reach => 32,
        }
    }

    pub fn default_dataset_episodes(self) -> usize {
        match self {
            EnvKind::Bandit => 2000,
            EnvKind::Reach => 200,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Bandit => "bandit",
            EnvKind::Reach => "reach",
        })
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bandit" => Ok(EnvKind::Bandit),
            "reach" => Ok(EnvKind::Reach),
            other => Err(Error::Format(format!(
                "unknown environment `{other}` (expected bandit or reach)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandit_peaks_are_equal_and_optimal() {
        let b = MultiModalBandit::default();
        assert_eq!(b.reward(&[0.6, 0.6]), 0.0);
        assert_eq!(b.reward(&[-0.6, -0.6]), 0.0);
        assert!(b.reward(&[0.0, 0.0]) < -0.99);
        let mut rng = Rng::new(0);
        for _ in 0..1000 {
            let a = [rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)];
            let r = b.reward(&a);
            assert!((-1.0..=0.0).contains(&r));
        }
    }

    #[test]
    fn reach_rewards_and_termination() {
        let env = SparseReach::default();
        let mut rng = Rng::new(1);
        let s = vec![0.55, 0.6, 1.0, 0.0];
        let out = env.step(&s, &[0.5, 0.0], &mut rng);
        assert!(out.done && out.success && out.reward == 0.0);
        let far = env.step(&[0.0, 0.0, 0.0, 1.0], &[1.0, 1.0], &mut rng);
        assert!(!far.done && far.reward == -1.0);
        assert_eq!(&far.state[..2], &[0.1, 0.1]);
        let wall = env.step(&[0.98, -0.99, 1.0, 0.0], &[1.0, -1.0], &mut rng);
        assert_eq!(&wall.state[..2], &[1.0, -1.0]);
    }

    #[test]
    fn unit_chunk_is_identity() {
        let env = SparseReach::default();
        let chunked = ChunkAdapter::new(SparseReach::default(), 1, 0.99).unwrap();
        let mut rng = Rng::new(2);
        let s = env.reset(&mut rng);
        assert_eq!(
            chunked.step(&s, &[0.3, -0.2], &mut rng),
            env.step(&s, &[0.3, -0.2], &mut rng)
        );
        assert_eq!(chunked.action_dim(), 2);
    }

    #[test]
    fn chunk_discounts_rewards() {
        let env = ChunkAdapter::new(SparseReach::default(), 2, 0.99).unwrap();
        let out = env.step(
            &[0.0, 0.0, 1.0, 0.0],
            &[0.1, 0.1, 0.1, 0.1],
            &mut Rng::new(3),
        );
        assert!((out.reward - -1.99).abs() < 1e-12);
        assert_eq!(out.substeps, 2);
    }

    #[test]
    fn chunk_truncates_on_termination() {
        let env = ChunkAdapter::new(SparseReach::default(), 3, 0.99).unwrap();
        // first sub-action lands on the goal; the next two would leave it
        let out = env.step(
            &[0.55, 0.6, 1.0, 0.0],
            &[0.5, 0.0, -1.0, -1.0, -1.0, -1.0],
            &mut Rng::new(4),
        );
        assert!(out.done && out.success);
        assert_eq!(out.substeps, 1);
        assert_eq!(out.reward, 0.0);
        assert!((out.state[0] - 0.6).abs() < 1e-12);
    }
}
