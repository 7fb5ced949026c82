//! One-step generative flows.
//!
//! A mean velocity `u(a, t, r, s)` is the average of the instantaneous
//! velocity along the flow over `[t, r]`, so `a + (r − t)·u` jumps straight
//! from time `t` to time `r`. Training minimizes the residual of the
//! identity `u = v − (t − r)·du/dt` (total derivative along the flow,
//! evaluated by forward mode) plus a boundary term pinning `u(a, t, t)` to
//! the instantaneous velocity.

mod field;
mod loss;
mod metrics;
mod oracle;
mod sample;
mod targets;
mod train;

pub use field::{
    ConstantField, FieldSpec, FlowMatchNet, IdentityField, InstantVelocity, MeanFlowNet,
    MeanVelocity, TimeEmbedding,
};
pub use loss::{
    cfm_loss, cfm_loss_grad, ivc_loss, mf_loss, mf_loss_against, mf_target, policy_loss,
    policy_loss_grad, total_time_derivative, LossParts,
};
pub use metrics::{energy_distance, DistanceReport};
pub use oracle::{dirac_mean_velocity, DiracField, GaussianOracle};
pub use sample::{euler_sample, one_step_sample};
pub use targets::DensityTarget;
pub use train::{
    fit_flow_matching, fit_mean_flow, flow_matching_step, mean_flow_step, TrainConfig,
};

pub(crate) use field::ones_col;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::{Rng, Tensor};

/// Distribution of the `(t, r)` pair used by the mean-flow loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeSampling {
    /// Two independent uniforms, sorted.
    #[default]
    UniformPair,
    /// Two independent `sigmoid(N(mu, sigma²))` draws, sorted.
    LogitNormal { mu: f64, sigma: f64 },
}

impl TimeSampling {
    fn draw(&self, rng: &mut Rng) -> f64 {
        match *self {
            TimeSampling::UniformPair => rng.uniform(),
            TimeSampling::LogitNormal { mu, sigma } => {
                1.0 / (1.0 + (-(mu + sigma * rng.standard_normal())).exp())
            }
        }
    }
}

/// `(t, r)` columns `[batch×1]` with `t ≤ r` in every row.
pub fn sample_times(rng: &mut Rng, batch: usize, scheme: TimeSampling) -> (Tensor, Tensor) {
    let mut t = Vec::with_capacity(batch);
    let mut r = Vec::with_capacity(batch);
    for _ in 0..batch {
        let (u1, u2) = (scheme.draw(rng), scheme.draw(rng));
        t.push(u1.min(u2));
        r.push(u1.max(u2));
    }
    (Tensor::column(t), Tensor::column(r))
}

/// Point on the straight path `t·a1 + (1−t)·a0` and its velocity `a1 − a0`.
/// `t` is a `[b×1]` column.
pub fn interpolate(a0: &Tensor, a1: &Tensor, t: &Tensor) -> Result<(Tensor, Tensor)> {
    if a0.shape() != a1.shape() || t.shape() != [a0.rows(), 1] {
        return Err(contract(format!(
            "interpolate: a0 {:?}, a1 {:?}, t {:?}",
            a0.shape(),
            a1.shape(),
            t.shape()
        )));
    }
    if let Some(bad) = t.data().iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(contract(format!("interpolate: time {bad} outside [0, 1]")));
    }
    let v = a1.sub(a0);
    let at = a0.add(&v.mul_col(t));
    Ok((at, v))
}

/// One minibatch for the flow losses. Times are `[b×1]` columns; `t_ivc`
/// is drawn independently of `(t, r)` for the boundary term.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowBatch {
    pub a0: Tensor,
    pub a1: Tensor,
    pub s: Tensor,
    pub t: Tensor,
    pub r: Tensor,
    pub t_ivc: Tensor,
}

impl FlowBatch {
    pub fn new(
        a0: Tensor,
        a1: Tensor,
        s: Tensor,
        t: Tensor,
        r: Tensor,
        t_ivc: Tensor,
    ) -> Result<Self> {
        let b = a1.rows();
        let col = [b, 1];
        if a0.shape() != a1.shape()
            || s.rows() != b
            || t.shape() != col
            || r.shape() != col
            || t_ivc.shape() != col
        {
            return Err(contract(format!(
                "flow batch shapes a0 {:?} a1 {:?} s {:?} t {:?} r {:?} t_ivc {:?}",
                a0.shape(),
                a1.shape(),
                s.shape(),
                t.shape(),
                r.shape(),
                t_ivc.shape()
            )));
        }
        for i in 0..b {
            let (ti, ri, ci) = (t.data()[i], r.data()[i], t_ivc.data()[i]);
            if !(0.0 <= ti && ti <= ri && ri <= 1.0 && (0.0..=1.0).contains(&ci)) {
                return Err(contract(format!(
                    "flow batch row {i}: need 0 ≤ t ≤ r ≤ 1, got t={ti} r={ri} t_ivc={ci}"
                )));
            }
        }
        Ok(Self {
            a0,
            a1,
            s,
            t,
            r,
            t_ivc,
        })
    }

    /// Fresh noise and times around given targets `a1` and states `s`.
    pub fn sample(a1: Tensor, s: Tensor, scheme: TimeSampling, rng: &mut Rng) -> Self {
        let b = a1.rows();
        let a0 = rng.normal_tensor(a1.shape());
        let (t, r) = sample_times(rng, b, scheme);
        let t_ivc = rng.uniform_tensor(&[b, 1], 0.0, 1.0);
        Self {
            a0,
            a1,
            s,
            t,
            r,
            t_ivc,
        }
    }

    /// Unconditional batch: zero-width states.
    pub fn unconditional(a1: Tensor, scheme: TimeSampling, rng: &mut Rng) -> Self {
        let s = Tensor::zeros(&[a1.rows(), 0]);
        Self::sample(a1, s, scheme, rng)
    }

    pub fn len(&self) -> usize {
        self.a1.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Beta, ContinuousCDF};

    fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max((i as f64 + 1.0) / n - f)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let a0 = Tensor::matrix(1, 1, vec![0.0]);
        let a1 = Tensor::matrix(1, 1, vec![2.0]);
        let (x, v) = interpolate(&a0, &a1, &Tensor::column(vec![0.25])).unwrap();
        assert_eq!((x.item(), v.item()), (0.5, 2.0));
        let a0 = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let a1 = Tensor::matrix(2, 2, vec![-1.0, 0.5, 7.0, 9.0]);
        assert_eq!(
            interpolate(&a0, &a1, &Tensor::column(vec![0.0, 0.0]))
                .unwrap()
                .0,
            a0
        );
        assert_eq!(
            interpolate(&a0, &a1, &Tensor::column(vec![1.0, 1.0]))
                .unwrap()
                .0,
            a1
        );
        assert!(interpolate(&a0, &a1, &Tensor::column(vec![1.5, 0.0])).is_err());
    }

    #[test]
    fn time_pairs_are_ordered() {
        let mut rng = Rng::new(9);
        for scheme in [
            TimeSampling::UniformPair,
            TimeSampling::LogitNormal {
                mu: -0.4,
                sigma: 1.0,
            },
        ] {
            let (t, r) = sample_times(&mut rng, 10_000, scheme);
            assert!(t.data().iter().zip(r.data()).all(|(a, b)| a <= b));
        }
    }

    #[test]
    fn time_marginals_are_order_statistics() {
        // min and max of two uniforms are Beta(1,2) and Beta(2,1)
        let mut rng = Rng::new(11);
        let (t, r) = sample_times(&mut rng, 1_000_000, TimeSampling::UniformPair);
        let lo = Beta::new(1.0, 2.0).unwrap();
        let hi = Beta::new(2.0, 1.0).unwrap();
        let dt = ks_statistic(t.into_data(), |x| lo.cdf(x));
        let dr = ks_statistic(r.into_data(), |x| hi.cdf(x));
        assert!(dt < 0.01, "KS(t) = {dt}");
        assert!(dr < 0.01, "KS(r) = {dr}");
    }

    #[test]
    fn batch_rejects_reversed_times() {
        let z = Tensor::zeros(&[1, 1]);
        let ok = FlowBatch::new(
            z.clone(),
            z.clone(),
            Tensor::zeros(&[1, 0]),
            Tensor::column(vec![0.2]),
            Tensor::column(vec![0.7]),
            Tensor::column(vec![0.5]),
        );
        assert!(ok.is_ok());
        let bad = FlowBatch::new(
            z.clone(),
            z.clone(),
            Tensor::zeros(&[1, 0]),
            Tensor::column(vec![0.7]),
            Tensor::column(vec![0.2]),
            Tensor::column(vec![0.5]),
        );
        assert!(bad.is_err());
    }

    #[test]
    fn sampled_batches_are_valid() {
        let mut rng = Rng::new(5);
        let b = FlowBatch::unconditional(
            rng.normal_tensor(&[64, 2]),
            TimeSampling::UniformPair,
            &mut rng,
        );
        let checked = FlowBatch::new(
            b.a0.clone(),
            b.a1.clone(),
            b.s.clone(),
            b.t.clone(),
            b.r.clone(),
            b.t_ivc.clone(),
        );
        assert_eq!(checked.unwrap(), b);
    }
}
