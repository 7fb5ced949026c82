use serde::{Deserialize, Serialize};

use super::field::{FlowMatchNet, MeanFlowNet};
use super::loss::{cfm_loss_grad, policy_loss_grad, LossParts};
use super::targets::DensityTarget;
use super::{FlowBatch, TimeSampling};
use crate::error::{Error, Result};
use crate::nets::{AdamConfig, AdamState};
use crate::Rng;

/// Settings for unconditional density fitting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub adam: AdamConfig,
    pub time_sampling: TimeSampling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 256,
            lambda: 1.0,
            adam: AdamConfig::default(),
            time_sampling: TimeSampling::UniformPair,
        }
    }
}

fn tag_step(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { what, .. } => Error::NonFinite { what, step },
        other => other,
    }
}

/// One optimizer step on `mf + λ·ivc`.
pub fn mean_flow_step(
    u: &mut MeanFlowNet,
    adam: &mut AdamState,
    batch: &FlowBatch,
    lambda: f64,
) -> Result<LossParts> {
    let (parts, grads) = policy_loss_grad(u, batch, lambda)?;
    adam.step(u.net.tensors_mut(), &grads)?;
    Ok(parts)
}

/// One optimizer step on the flow-matching loss.
pub fn flow_matching_step(
    v: &mut FlowMatchNet,
    adam: &mut AdamState,
    batch: &FlowBatch,
) -> Result<f64> {
    let (loss, grads) = cfm_loss_grad(v, batch)?;
    adam.step(v.net.tensors_mut(), &grads)?;
    Ok(loss)
}

/// Trains an unconditional mean-flow model on draws from `target`; returns
/// the per-step losses.
pub fn fit_mean_flow(
    u: &mut MeanFlowNet,
    target: &DensityTarget,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<LossParts>> {
    let mut adam = AdamState::new(u.net.tensors(), cfg.adam);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let a1 = target.sample(cfg.batch_size, rng);
        let batch = FlowBatch::unconditional(a1, cfg.time_sampling, rng);
        history
            .push(mean_flow_step(u, &mut adam, &batch, cfg.lambda).map_err(|e| tag_step(e, step))?);
    }
    Ok(history)
}

/// Trains an unconditional flow-matching model; returns per-step losses.
pub fn fit_flow_matching(
    v: &mut FlowMatchNet,
    target: &DensityTarget,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let mut adam = AdamState::new(v.net.tensors(), cfg.adam);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let a1 = target.sample(cfg.batch_size, rng);
        let batch = FlowBatch::unconditional(a1, cfg.time_sampling, rng);
        history.push(flow_matching_step(v, &mut adam, &batch).map_err(|e| tag_step(e, step))?);
    }
    Ok(history)
}
