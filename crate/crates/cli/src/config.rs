//! Flat run configuration. Every knob lives at the top level so one file
//! (or a list of `key=value` overrides) describes a run completely.

use std::path::Path;

use mvp_core::meanflow::{DensityTarget, FieldSpec, TimeEmbedding, TimeSampling, TrainConfig};
use mvp_core::nets::AdamConfig;
use mvp_core::rl::{AgentConfig, CriticSource, EnvKind};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,

    // optimizer and shared training knobs
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub lambda: f64,
    /// `uniform_pair` or `logit_normal`.
    pub time_sampling: String,
    pub logit_mu: f64,
    pub logit_sigma: f64,
    pub euler_steps: usize,

    // networks
    pub policy_width: usize,
    pub policy_depth: usize,
    pub policy_layer_norm: bool,
    /// `raw` or `sinusoidal`.
    pub time_embedding: String,
    pub embedding_dims: usize,
    pub critic_width: usize,
    pub critic_depth: usize,
    pub critic_layer_norm: bool,
    pub ensemble_size: usize,

    // density fitting
    pub target: String,
    pub fit_steps: usize,
    /// Extra IVC weights to train side by side; empty means just `lambda`.
    pub ablation_lambdas: Vec<f64>,
    pub fit_samples: usize,
    /// Points per side in the energy distance (quadratic cost).
    pub distance_samples: usize,
    pub fit_log_interval: usize,

    // reinforcement learning
    pub env: String,
    pub offline_steps: usize,
    pub online_steps: usize,
    /// Candidates per decision; 0 picks the task default (16 bandit, 32 reach).
    pub best_of_n: usize,
    pub gamma: f64,
    pub tau: f64,
    pub utd: usize,
    pub chunk: usize,
    /// Critic that scores next-state candidates: `online` or `target`.
    pub td_selection: String,
    /// Critic that values the chosen next action: `online` or `target`.
    pub td_bootstrap: String,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub record_latency: bool,
    pub buffer_capacity: usize,
    /// Episodes of scripted data; 0 picks the task default.
    pub dataset_episodes: usize,
    /// Existing dataset file; empty generates one inside the run.
    pub dataset: String,

    // theory probes
    pub gain_samples: usize,
    pub gain_ns: Vec<usize>,
    pub injected_c: f64,
    pub probe_steps: usize,
    pub probe_seeds: Vec<u64>,

    pub gradcheck_configs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            seed: 0,
            batch_size: 256,
            lr: adam.lr,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            lambda: 1.0,
            time_sampling: "uniform_pair".into(),
            logit_mu: -0.4,
            logit_sigma: 1.0,
            euler_steps: 10,
            policy_width: 64,
            policy_depth: 2,
            policy_layer_norm: false,
            time_embedding: "raw".into(),
            embedding_dims: 8,
            critic_width: 64,
            critic_depth: 2,
            critic_layer_norm: true,
            ensemble_size: 2,
            target: "dirac".into(),
            fit_steps: 5000,
            ablation_lambdas: Vec::new(),
            fit_samples: 10_000,
            distance_samples: 2000,
            fit_log_interval: 100,
            env: "bandit".into(),
            offline_steps: 20_000,
            online_steps: 20_000,
            best_of_n: 0,
            gamma: 0.99,
            tau: 5e-3,
            utd: 1,
            chunk: 1,
            td_selection: "online".into(),
            td_bootstrap: "target".into(),
            eval_interval: 1000,
            eval_episodes: 50,
            record_latency: false,
            buffer_capacity: 1_000_000,
            dataset_episodes: 0,
            dataset: String::new(),
            gain_samples: 100_000,
            gain_ns: vec![1, 2, 4, 8, 16, 32],
            injected_c: 0.3,
            probe_steps: 5000,
            probe_seeds: vec![0, 1, 2],
            gradcheck_configs: 100,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_source(key: &str, v: &str) -> Result<CriticSource, CliError> {
    match v {
        "online" => Ok(CriticSource::Online),
        "target" => Ok(CriticSource::Target),
        other => Err(usage(format!(
            "{key} must be online or target, got `{other}`"
        ))),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| usage(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    /// Applies `key=value` overrides; values use TOML syntax, with bare
    /// words accepted as strings.
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self, CliError> {
        let mut table = toml::Table::try_from(self).expect("flat config always serializes");
        for set in sets {
            let (key, raw) = set
                .split_once('=')
                .ok_or_else(|| usage(format!("override `{set}` is not key=value")))?;
            let key = key.trim();
            if !table.contains_key(key) {
                return Err(usage(format!("unknown config key `{key}`")));
            }
            let raw = raw.trim();
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table.insert(key.to_string(), value);
        }
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| usage(format!("bad override: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.time_sampling()?;
        self.embedding()?;
        self.target()?;
        self.env_kind()?;
        parse_source("td_selection", &self.td_selection)?;
        parse_source("td_bootstrap", &self.td_bootstrap)?;
        if self.batch_size == 0
            || self.euler_steps == 0
            || self.fit_samples == 0
            || self.distance_samples == 0
        {
            return Err(usage(
                "batch_size, euler_steps, fit_samples and distance_samples must be positive",
            ));
        }
        Ok(())
    }

    pub fn target(&self) -> Result<DensityTarget, CliError> {
        self.target.parse().map_err(|e: mvp_core::Error| match e {
            mvp_core::Error::Format(m) => usage(m),
            other => usage(other.to_string()),
        })
    }

    pub fn env_kind(&self) -> Result<EnvKind, CliError> {
        self.env.parse().map_err(|e: mvp_core::Error| match e {
            mvp_core::Error::Format(m) => usage(m),
            other => usage(other.to_string()),
        })
    }

    pub fn time_sampling(&self) -> Result<TimeSampling, CliError> {
        match self.time_sampling.as_str() {
            "uniform_pair" => Ok(TimeSampling::UniformPair),
            "logit_normal" => Ok(TimeSampling::LogitNormal {
                mu: self.logit_mu,
                sigma: self.logit_sigma,
            }),
            other => Err(usage(format!(
                "time_sampling must be uniform_pair or logit_normal, got `{other}`"
            ))),
        }
    }

    pub fn embedding(&self) -> Result<TimeEmbedding, CliError> {
        match self.time_embedding.as_str() {
            "raw" => Ok(TimeEmbedding::Raw),
            "sinusoidal" => Ok(TimeEmbedding::Sinusoidal {
                dims: self.embedding_dims,
            }),
            other => Err(usage(format!(
                "time_embedding must be raw or sinusoidal, got `{other}`"
            ))),
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn field_spec(&self, action_dim: usize, state_dim: usize) -> Result<FieldSpec, CliError> {
        Ok(FieldSpec {
            action_dim,
            state_dim,
            width: self.policy_width,
            depth: self.policy_depth,
            layer_norm: self.policy_layer_norm,
            embedding: self.embedding()?,
        })
    }

    pub fn train_config(&self, lambda: f64) -> Result<TrainConfig, CliError> {
        Ok(TrainConfig {
            steps: self.fit_steps,
            batch_size: self.batch_size,
            lambda,
            adam: self.adam(),
            time_sampling: self.time_sampling()?,
        })
    }

    /// IVC weights trained by `fit2d`.
    pub fn fit_lambdas(&self) -> Vec<f64> {
        if self.ablation_lambdas.is_empty() {
            vec![self.lambda]
        } else {
            self.ablation_lambdas.clone()
        }
    }

    pub fn best_of_n_for(&self, kind: EnvKind) -> usize {
        if self.best_of_n == 0 {
            kind.default_best_of_n()
        } else {
            self.best_of_n
        }
    }

    pub fn dataset_episodes_for(&self, kind: EnvKind) -> usize {
        if self.dataset_episodes == 0 {
            kind.default_dataset_episodes()
        } else {
            self.dataset_episodes
        }
    }

    pub fn agent_config(&self) -> Result<AgentConfig, CliError> {
        let kind = self.env_kind()?;
        Ok(AgentConfig {
            batch_size: self.batch_size,
            gamma: self.gamma,
            lambda: self.lambda,
            tau: self.tau,
            utd: self.utd,
            best_of_n: self.best_of_n_for(kind),
            chunk: self.chunk,
            selection: parse_source("td_selection", &self.td_selection)?,
            bootstrap: parse_source("td_bootstrap", &self.td_bootstrap)?,
            time_sampling: self.time_sampling()?,
            adam: self.adam(),
            policy_width: self.policy_width,
            policy_depth: self.policy_depth,
            policy_layer_norm: self.policy_layer_norm,
            embedding: self.embedding()?,
            critic_width: self.critic_width,
            critic_depth: self.critic_depth,
            critic_layer_norm: self.critic_layer_norm,
            ensemble_size: self.ensemble_size,
            eval_interval: self.eval_interval,
            eval_episodes: self.eval_episodes,
            record_latency: self.record_latency,
            buffer_capacity: self.buffer_capacity,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_hyperparameter_table() {
        let c = RunConfig::default();
        assert_eq!(
            (
                c.batch_size,
                c.gamma,
                c.lr,
                c.tau,
                c.utd,
                c.euler_steps,
                c.lambda
            ),
            (256, 0.99, 3e-4, 5e-3, 1, 10, 1.0)
        );
        assert_eq!(c.best_of_n_for(EnvKind::Bandit), 16);
        assert_eq!(c.best_of_n_for(EnvKind::Reach), 32);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig {
            seed: 7,
            ablation_lambdas: vec![0.0, 1.0],
            ..Default::default()
        };
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn overrides_parse_values_and_bare_words() {
        let c = RunConfig::default()
            .with_overrides(&[
                "lambda=0.5".into(),
                "target=gmm2".into(),
                "ablation_lambdas=[0.0, 1.0]".into(),
                "record_latency=true".into(),
            ])
            .unwrap();
        assert_eq!(
            (c.lambda, c.target.as_str(), c.record_latency),
            (0.5, "gmm2", true)
        );
        assert_eq!(c.ablation_lambdas, vec![0.0, 1.0]);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        assert!(matches!(
            RunConfig::default().with_overrides(&["nope=1".into()]),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("nope = 1"),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            RunConfig::default().with_overrides(&["time_sampling=weird".into()]),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn full_scale_is_expressible() {
        let c = RunConfig::default()
            .with_overrides(&[
                "policy_width=512".into(),
                "policy_depth=4".into(),
                "offline_steps=1000000".into(),
                "chunk=5".into(),
            ])
            .unwrap();
        assert_eq!(
            (c.policy_width, c.policy_depth, c.offline_steps, c.chunk),
            (512, 4, 1_000_000, 5)
        );
    }
}
