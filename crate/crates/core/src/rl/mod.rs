//! Actor-critic training around a one-step policy.
//!
//! The policy proposes N candidate actions in one network evaluation each
//! and the critic ensemble picks the best. The same generate-then-select
//! rule chooses the bootstrap action in the TD target. Training runs in two
//! phases: updates on a fixed offline dataset, then live interaction where
//! the executed action doubles as the policy's regression target.

pub mod agent;
pub mod buffer;
pub mod critic_loss;
pub mod dataset;
pub mod env;
pub mod policy;

pub use agent::{evaluate, Agent, AgentConfig, EvalReport, MetricsRow, UpdateLosses};
pub use buffer::{ReplayBuffer, Transition, TransitionBatch};
pub use critic_loss::{critic_loss_against, critic_td_loss, td_targets, CriticSource, TdConfig};
pub use dataset::{make_offline_dataset, Dataset, DatasetHeader};
pub use env::{ChunkAdapter, Env, EnvKind, MultiModalBandit, SparseReach, StepOutcome};
pub use policy::{best_of_n_act, select_best, ActionValue, CandidateSampler, EulerSteps, OneStep};
