//! Temporal-difference regression for the critic ensemble.

use serde::{Deserialize, Serialize};

use super::buffer::TransitionBatch;
use super::policy::{best_of_n_act, CandidateSampler};
use crate::autodiff::{Graph, Tape};
use crate::error::{contract, Error, Result};
use crate::nets::CriticEnsemble;
use crate::{Rng, Tensor};

/// Which ensemble plays a role in the bootstrap.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticSource {
    Online,
    #[default]
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdConfig {
    /// Discount applied to the bootstrap. For `h`-step chunks pass `γ^h`.
    pub discount: f64,
    pub best_of_n: usize,
    /// Scores the candidates at the next state.
    pub selection: CriticSource,
    /// Evaluates the chosen next action.
    pub bootstrap: CriticSource,
}

impl Default for TdConfig {
    fn default() -> Self {
        Self {
            discount: 0.99,
            best_of_n: 16,
            selection: CriticSource::Online,
            bootstrap: CriticSource::Target,
        }
    }
}

/// Regression targets `y = r + discount·(1 − done)·Q̄(s', a⋆)`, with `a⋆`
/// chosen best-of-N at `s'`. Terminal rows get `y = r` and draw no
/// candidates.
pub fn td_targets<P: CandidateSampler + ?Sized>(
    online: &CriticEnsemble,
    target: &CriticEnsemble,
    policy: &P,
    batch: &TransitionBatch,
    cfg: &TdConfig,
    rng: &mut Rng,
) -> Result<Tensor> {
    let pick = |src| match src {
        CriticSource::Online => online,
        CriticSource::Target => target,
    };
    let live: Vec<usize> = (0..batch.len())
        .filter(|&i| batch.done.data()[i] == 0.0)
        .collect();
    let mut y = batch.r.clone();
    if live.is_empty() {
        return Ok(y);
    }
    let s_next = batch.s_next.gather_rows(&live);
    let (a_star, _) = best_of_n_act(policy, pick(cfg.selection), &s_next, cfg.best_of_n, rng)?;
    let q_next = pick(cfg.bootstrap).mean(&s_next, &a_star);
    for (k, &i) in live.iter().enumerate() {
        y.data_mut()[i] += cfg.discount * q_next.data()[k];
    }
    Ok(y)
}

fn check_targets(q: &CriticEnsemble, batch: &TransitionBatch, y: &Tensor) -> Result<()> {
    if y.shape() != [batch.len(), 1] {
        return Err(contract(format!(
            "TD targets {:?} do not match a batch of {}",
            y.shape(),
            batch.len()
        )));
    }
    if q.spec().input_dim != batch.s.cols() + batch.a.cols() {
        return Err(contract(format!(
            "critic expects {} inputs, batch has {} state + {} action columns",
            q.spec().input_dim,
            batch.s.cols(),
            batch.a.cols()
        )));
    }
    Ok(())
}

fn loss_on<G: Graph>(
    g: &mut G,
    q: &CriticEnsemble,
    bound: &[Vec<G::Value>],
    batch: &TransitionBatch,
    y: &Tensor,
) -> G::Value {
    let s = g.constant(batch.s.clone());
    let a = g.constant(batch.a.clone());
    let y = g.constant(y.clone());
    let outs = q.apply_members(g, bound, &s, &a);
    let mut total: Option<G::Value> = None;
    for out in &outs {
        let diff = g.sub(out, &y);
        let term = g.mean_row_sq_norm(&diff);
        total = Some(match total {
            None => term,
            Some(acc) => g.add(&acc, &term),
        });
    }
    let total = total.expect("ensemble has at least one member");
    g.scale(&total, 1.0 / outs.len() as f64)
}

/// Mean over members and rows of `(Q_i(s, a) − y)²`, with the gradient for
/// every member tensor in [`CriticEnsemble::flat_tensors`] order. `y` is
/// data, so nothing flows into whatever produced it.
pub fn critic_loss_against(
    q: &CriticEnsemble,
    batch: &TransitionBatch,
    y: &Tensor,
) -> Result<(f64, Vec<Tensor>)> {
    check_targets(q, batch, y)?;
    let mut tape = Tape::new();
    let bound: Vec<_> = q.members.iter().map(|m| m.bind(&mut tape)).collect();
    let loss = loss_on(&mut tape, q, &bound, batch, y);
    let value = tape.value(&loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite {
            what: format!("critic loss {value}"),
            step: 0,
        });
    }
    let flat: Vec<_> = bound.into_iter().flatten().collect();
    Ok((value, tape.backward(loss)?.wrt_all(&flat)))
}

/// TD targets followed by [`critic_loss_against`].
pub fn critic_td_loss<P: CandidateSampler + ?Sized>(
    online: &CriticEnsemble,
    target: &CriticEnsemble,
    policy: &P,
    batch: &TransitionBatch,
    cfg: &TdConfig,
    rng: &mut Rng,
) -> Result<(f64, Vec<Tensor>)> {
    let y = td_targets(online, target, policy, batch, cfg, rng)?;
    critic_loss_against(online, batch, &y)
}
