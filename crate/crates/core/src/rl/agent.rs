//! Offline pre-training and online fine-tuning of a one-step policy with a
//! best-of-N critic.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::buffer::{ReplayBuffer, Transition};
use super::critic_loss::{critic_td_loss, CriticSource, TdConfig};
use super::env::Env;
use super::policy::{best_of_n_act, ActionValue, CandidateSampler, OneStep};
use crate::error::{contract, Error, Result};
use crate::meanflow::{
    mean_flow_step, FieldSpec, FlowBatch, LossParts, MeanFlowNet, TimeEmbedding, TimeSampling,
};
use crate::nets::{polyak_update, AdamConfig, AdamState, CriticEnsemble};
use crate::{Rng, Tensor};

/// Every knob of the actor-critic loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub batch_size: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub tau: f64,
    /// Gradient updates per environment step in the online phase.
    pub utd: usize,
    pub best_of_n: usize,
    /// Sub-actions per policy output.
    pub chunk: usize,
    pub selection: CriticSource,
    pub bootstrap: CriticSource,
    pub time_sampling: TimeSampling,
    pub adam: AdamConfig,
    pub policy_width: usize,
    pub policy_depth: usize,
    pub policy_layer_norm: bool,
    pub embedding: TimeEmbedding,
    pub critic_width: usize,
    pub critic_depth: usize,
    pub critic_layer_norm: bool,
    pub ensemble_size: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Wall-clock latency makes metrics irreproducible, so it is opt-in.
    pub record_latency: bool,
    pub buffer_capacity: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            gamma: 0.99,
            lambda: 1.0,
            tau: 5e-3,
            utd: 1,
            best_of_n: 16,
            chunk: 1,
            selection: CriticSource::Online,
            bootstrap: CriticSource::Target,
            time_sampling: TimeSampling::UniformPair,
            adam: AdamConfig::default(),
            policy_width: 64,
            policy_depth: 2,
            policy_layer_norm: false,
            embedding: TimeEmbedding::Raw,
            critic_width: 64,
            critic_depth: 2,
            critic_layer_norm: true,
            ensemble_size: 2,
            eval_interval: 1000,
            eval_episodes: 50,
            record_latency: false,
            buffer_capacity: 1_000_000,
        }
    }
}

impl AgentConfig {
    pub fn td(&self) -> TdConfig {
        TdConfig {
            discount: self.gamma.powi(self.chunk.max(1) as i32),
            best_of_n: self.best_of_n,
            selection: self.selection,
            bootstrap: self.bootstrap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.best_of_n == 0
            || self.chunk == 0
            || self.utd == 0
            || self.buffer_capacity == 0
        {
            return Err(contract(
                "batch size, best-of-N, chunk, UTD and buffer capacity must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.tau)
            || !(0.0..=1.0).contains(&self.gamma)
            || self.lambda < 0.0
        {
            return Err(contract(format!(
                "need τ, γ in [0, 1] and λ ≥ 0, got {}, {}, {}",
                self.tau, self.gamma, self.lambda
            )));
        }
        Ok(())
    }
}

/// Aggregate of evaluation rollouts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub success_rate: f64,
    pub mean_return: f64,
    /// Mean wall time of one action selection, in microseconds.
    pub latency_us: f64,
}

/// One line of the metrics stream: losses averaged over the interval since
/// the previous row, plus an evaluation at this step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub phase: String,
    pub policy_loss: f64,
    pub mf_loss: f64,
    pub ivc_loss: f64,
    pub critic_loss: f64,
    pub eval_success: f64,
    pub eval_return: f64,
    pub act_latency_us: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateLosses {
    pub policy: LossParts,
    pub critic: f64,
}

/// Policy, critics and optimizer state.
#[derive(Clone, Debug)]
pub struct Agent {
    pub config: AgentConfig,
    pub policy: MeanFlowNet,
    pub critic: CriticEnsemble,
    pub target: CriticEnsemble,
    policy_opt: AdamState,
    critic_opt: AdamState,
    /// Gradient updates applied so far.
    pub updates: usize,
    /// Global step counter across both phases.
    pub step: usize,
}

/// Runs `episodes` seeded rollouts choosing actions best-of-`n`.
pub fn evaluate(
    policy: &dyn CandidateSampler,
    q: &dyn ActionValue,
    env: &dyn Env,
    episodes: usize,
    n: usize,
    seed: u64,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(contract("evaluation needs at least one episode"));
    }
    let mut rng = Rng::new(seed);
    let (mut successes, mut total_return, mut acts, mut elapsed) = (0usize, 0.0, 0usize, 0.0);
    for _ in 0..episodes {
        let mut s = env.reset(&mut rng);
        for _ in 0..env.max_episode_steps() {
            let st = Tensor::matrix(1, s.len(), s.clone());
            let clock = Instant::now();
            let (a, _) = best_of_n_act(policy, q, &st, n, &mut rng)?;
            elapsed += clock.elapsed().as_secs_f64();
            acts += 1;
            let out = env.step(&s, a.data(), &mut rng);
            total_return += out.reward;
            s = out.state;
            if out.done {
                successes += usize::from(out.success);
                break;
            }
        }
    }
    Ok(EvalReport {
        success_rate: successes as f64 / episodes as f64,
        mean_return: total_return / episodes as f64,
        latency_us: 1e6 * elapsed / acts as f64,
    })
}

#[derive(Default)]
struct Accumulator {
    policy: LossParts,
    critic: f64,
    count: usize,
}

impl Accumulator {
    fn add(&mut self, l: &UpdateLosses) {
        self.policy.total += l.policy.total;
        self.policy.mf += l.policy.mf;
        self.policy.ivc += l.policy.ivc;
        self.critic += l.critic;
        self.count += 1;
    }

    fn take(&mut self) -> (LossParts, f64) {
        let k = self.count.max(1) as f64;
        let out = (
            LossParts {
                total: self.policy.total / k,
                mf: self.policy.mf / k,
                ivc: self.policy.ivc / k,
            },
            self.critic / k,
        );
        *self = Self::default();
        out
    }
}

fn tag_step(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { what, .. } => Error::NonFinite { what, step },
        other => other,
    }
}

impl Agent {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        config: AgentConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        let spec = FieldSpec {
            action_dim,
            state_dim,
            width: config.policy_width,
            depth: config.policy_depth,
            layer_norm: config.policy_layer_norm,
            embedding: config.embedding,
        };
        let policy = MeanFlowNet::init(spec, rng)?;
        let critic = CriticEnsemble::init(
            state_dim,
            action_dim,
            config.critic_width,
            config.critic_depth,
            config.critic_layer_norm,
            config.ensemble_size,
            rng,
        )?;
        let target = critic.clone();
        let policy_opt = AdamState::new(policy.net.tensors(), config.adam);
        let critic_opt = AdamState::new(&critic.flat_tensors(), config.adam);
        Ok(Self {
            config,
            policy,
            critic,
            target,
            policy_opt,
            critic_opt,
            updates: 0,
            step: 0,
        })
    }

    /// Sizes the networks for `env` with the chunked action width.
    pub fn for_env(env: &dyn Env, config: AgentConfig, rng: &mut Rng) -> Result<Self> {
        Self::new(env.state_dim(), env.action_dim(), config, rng)
    }

    /// Chooses best-of-N actions for each state row with the online critic.
    pub fn act(&self, s: &Tensor, rng: &mut Rng) -> Result<Tensor> {
        Ok(best_of_n_act(
            &OneStep(&self.policy),
            &self.critic,
            s,
            self.config.best_of_n,
            rng,
        )?
        .0)
    }

    pub fn evaluate(&self, env: &dyn Env, episodes: usize, seed: u64) -> Result<EvalReport> {
        evaluate(
            &OneStep(&self.policy),
            &self.critic,
            env,
            episodes,
            self.config.best_of_n,
            seed,
        )
    }

    /// One policy step on the buffered actions, one critic step on the TD
    /// targets, then the target average. If a step fails, parameters
    /// updated before the failure are kept and the rest are untouched.
    pub fn update(&mut self, buffer: &ReplayBuffer, rng: &mut Rng) -> Result<UpdateLosses> {
        let batch = buffer.sample(self.config.batch_size, rng)?;
        let flow = FlowBatch::sample(
            batch.a.clone(),
            batch.s.clone(),
            self.config.time_sampling,
            rng,
        );
        let policy = mean_flow_step(
            &mut self.policy,
            &mut self.policy_opt,
            &flow,
            self.config.lambda,
        )?;
        let (critic, grads) = critic_td_loss(
            &self.critic,
            &self.target,
            &OneStep(&self.policy),
            &batch,
            &self.config.td(),
            rng,
        )?;
        let mut flat = self.critic.flat_tensors();
        self.critic_opt.step(&mut flat, &grads)?;
        self.critic.set_flat_tensors(&flat);
        for (t, o) in self.target.members.iter_mut().zip(&self.critic.members) {
            polyak_update(t, o, self.config.tau)?;
        }
        self.updates += 1;
        Ok(UpdateLosses { policy, critic })
    }

    fn emit(
        &self,
        phase: &str,
        acc: &mut Accumulator,
        env: &dyn Env,
        eval_seed: u64,
        sink: &mut dyn FnMut(&MetricsRow) -> Result<()>,
    ) -> Result<()> {
        let (p, critic_loss) = acc.take();
        let report = self.evaluate(env, self.config.eval_episodes.max(1), eval_seed)?;
        sink(&MetricsRow {
            step: self.step,
            phase: phase.to_string(),
            policy_loss: p.total,
            mf_loss: p.mf,
            ivc_loss: p.ivc,
            critic_loss,
            eval_success: report.success_rate,
            eval_return: report.mean_return,
            act_latency_us: self.config.record_latency.then_some(report.latency_us),
        })
    }

    fn due(&self, local: usize) -> bool {
        self.config.eval_interval > 0 && local.is_multiple_of(self.config.eval_interval)
    }

    /// Trains on a fixed buffer for `steps` updates, sending a metrics row
    /// to `sink` every `eval_interval` steps. Evaluation uses `eval_seed`
    /// so it never disturbs the training stream.
    pub fn offline_pretrain(
        &mut self,
        buffer: &ReplayBuffer,
        env: &dyn Env,
        steps: usize,
        rng: &mut Rng,
        eval_seed: u64,
        sink: &mut dyn FnMut(&MetricsRow) -> Result<()>,
    ) -> Result<()> {
        let mut acc = Accumulator::default();
        for local in 1..=steps {
            self.step += 1;
            let losses = self
                .update(buffer, rng)
                .map_err(|e| tag_step(e, self.step))?;
            acc.add(&losses);
            if self.due(local) {
                self.emit("offline", &mut acc, env, eval_seed, sink)?;
            }
        }
        Ok(())
    }

    /// Interacts with `env` for `steps` decisions, storing each executed
    /// best-of-N action, with `utd` updates after every decision. Episodes
    /// cut by the horizon are stored as non-terminal.
    #[allow(clippy::too_many_arguments)]
    pub fn online_finetune(
        &mut self,
        buffer: &mut ReplayBuffer,
        env: &dyn Env,
        steps: usize,
        rng: &mut Rng,
        eval_seed: u64,
        sink: &mut dyn FnMut(&MetricsRow) -> Result<()>,
    ) -> Result<()> {
        let mut acc = Accumulator::default();
        let mut state = env.reset(rng);
        let mut t = 0;
        for local in 1..=steps {
            self.step += 1;
            let s = Tensor::matrix(1, state.len(), state.clone());
            let a = self.act(&s, rng)?;
            let out = env.step(&state, a.data(), rng);
            buffer.push(Transition {
                s: state,
                a: a.data().to_vec(),
                r: out.reward,
                s_next: out.state.clone(),
                done: out.done,
            });
            t += 1;
            state = if out.done || t >= env.max_episode_steps() {
                t = 0;
                env.reset(rng)
            } else {
                out.state
            };
            for _ in 0..self.config.utd {
                let losses = self
                    .update(buffer, rng)
                    .map_err(|e| tag_step(e, self.step))?;
                acc.add(&losses);
            }
            if self.due(local) {
                self.emit("online", &mut acc, env, eval_seed, sink)?;
            }
        }
        Ok(())
    }
}
