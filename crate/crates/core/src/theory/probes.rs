use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{contract, Result};
use crate::meanflow::{ones_col, total_time_derivative, InstantVelocity, MeanVelocity};
use crate::rl::{best_of_n_act, ActionValue, CandidateSampler, Env};
use crate::{Rng, Tensor};

/// Standard-normal quantiles at 0.1, 0.2, …, 0.9.
pub const NORMAL_DECILES: [f64; 9] = [
    -1.2815515655446004,
    -0.8416212335729143,
    -0.5244005127080407,
    -0.2533471031357997,
    0.0,
    0.2533471031357997,
    0.5244005127080407,
    0.8416212335729143,
    1.2815515655446004,
];

/// `base + c/(r − t)` in every coordinate: a member of the family of
/// solutions to the mean-flow identity that violates the boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectedField<U> {
    pub base: U,
    pub c: f64,
}

impl<U: MeanVelocity> MeanVelocity for InjectedField<U> {
    fn action_dim(&self) -> usize {
        self.base.action_dim()
    }

    fn bind<G: Graph>(&self, g: &mut G) -> Vec<G::Value> {
        self.base.bind(g)
    }

    fn apply<G: Graph>(
        &self,
        g: &mut G,
        bound: &[G::Value],
        a: &G::Value,
        t: &G::Value,
        r: &G::Value,
        s: &G::Value,
    ) -> G::Value {
        let out = self.base.apply(g, bound, a, t, r, s);
        let gap = g.sub(r, t);
        let one = ones_col(g, t);
        let c = g.scale(&one, self.c);
        let term = g.div(&c, &gap);
        let rows = g.value(&out).rows();
        let width = g.value(&out).cols();
        let ones = g.constant(Tensor::full(&[rows, width], 1.0));
        let spread = g.mul_col(&ones, &term);
        g.add(&out, &spread)
    }
}

/// `base + offset` in every coordinate. Not of the form `C/(r − t)`, so it
/// serves as the contrast case for the multiplicity fit.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetField<U> {
    pub base: U,
    pub offset: f64,
}

impl<U: MeanVelocity> MeanVelocity for OffsetField<U> {
    fn action_dim(&self) -> usize {
        self.base.action_dim()
    }

    fn bind<G: Graph>(&self, g: &mut G) -> Vec<G::Value> {
        self.base.bind(g)
    }

    fn apply<G: Graph>(
        &self,
        g: &mut G,
        bound: &[G::Value],
        a: &G::Value,
        t: &G::Value,
        r: &G::Value,
        s: &G::Value,
    ) -> G::Value {
        let out = self.base.apply(g, bound, a, t, r, s);
        let shape = g.value(&out).shape().to_vec();
        let c = g.constant(Tensor::full(&shape, self.offset));
        g.add(&out, &c)
    }
}

/// `u(a, t, r)` evaluated without states.
fn eval_u<U: MeanVelocity>(u: &U, a: &Tensor, t: &Tensor, r: &Tensor) -> Tensor {
    u.eval(a, t, r, &Tensor::zeros(&[a.rows(), 0]))
}

/// Residual of the mean-flow identity `u − v − (r − t)·du/dt`, where `v`
/// is the true instantaneous velocity and `du/dt` the derivative along
/// the true flow.
pub fn identity_residual<U: MeanVelocity, V: InstantVelocity>(
    u: &U,
    v: &V,
    a: &Tensor,
    t: &Tensor,
    r: &Tensor,
) -> Result<Tensor> {
    let s = Tensor::zeros(&[a.rows(), 0]);
    let vel = v.eval(a, t, &s);
    let (value, dudt) = total_time_derivative(u, a, t, r, &s, &vel)?;
    Ok(value.sub(&vel).sub(&dudt.mul_col(&r.sub(t))))
}

/// Evaluation points `(a, t, r)` for a one-dimensional point-mass target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleGrid {
    pub a: Vec<f64>,
    pub t: Vec<f64>,
    pub r: Vec<f64>,
}

impl OracleGrid {
    /// Positions on the straight paths from the noise deciles to `a_star`
    /// at `t ∈ {0, 0.1, …, t_max}`, paired with every `r ∈ {t, t + 0.1, …, 1}`.
    pub fn dirac(a_star: f64, t_max: f64) -> Self {
        let mut grid = Self {
            a: Vec::new(),
            t: Vec::new(),
            r: Vec::new(),
        };
        let steps = (t_max * 10.0).round() as usize;
        for &eps in &NORMAL_DECILES {
            for ti in 0..=steps {
                let t = ti as f64 / 10.0;
                let a = t * a_star + (1.0 - t) * eps;
                for ri in ti..=10 {
                    grid.a.push(a);
                    grid.t.push(t);
                    grid.r.push(ri as f64 / 10.0);
                }
            }
        }
        grid
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn tensors(&self) -> (Tensor, Tensor, Tensor) {
        (
            Tensor::column(self.a.clone()),
            Tensor::column(self.t.clone()),
            Tensor::column(self.r.clone()),
        )
    }

    /// The distinct `(a, t)` points, i.e. the rows with `r = t`.
    pub fn boundary(&self) -> (Tensor, Tensor) {
        let rows: Vec<usize> = (0..self.len())
            .filter(|&i| self.r[i] == self.t[i])
            .collect();
        (
            Tensor::column(rows.iter().map(|&i| self.a[i]).collect()),
            Tensor::column(rows.iter().map(|&i| self.t[i]).collect()),
        )
    }
}

/// Mean squared gap between a model and a reference field over `grid`.
pub fn grid_mse<U: MeanVelocity, O: MeanVelocity>(u: &U, oracle: &O, grid: &OracleGrid) -> f64 {
    let (a, t, r) = grid.tensors();
    let diff = eval_u(u, &a, &t, &r).sub(&eval_u(oracle, &a, &t, &r));
    diff.dot(&diff) / grid.len() as f64
}

/// `mean‖u(a, t, t) − v(a, t)‖²` over the points; no upper time enters.
pub fn boundary_error<U: MeanVelocity, V: InstantVelocity>(
    u: &U,
    v: &V,
    a: &Tensor,
    t: &Tensor,
) -> Result<f64> {
    if a.rows() == 0 || a.rows() != t.rows() {
        return Err(contract(format!(
            "boundary grid needs matching non-empty a {:?} and t {:?}",
            a.shape(),
            t.shape()
        )));
    }
    let diff = eval_u(u, a, t, t).sub(&v.eval(a, t, &Tensor::zeros(&[a.rows(), 0])));
    Ok(diff.dot(&diff) / a.rows() as f64)
}

/// Points for the multiplicity probe: for each `(a, r)` slice the lower
/// times are `t = r − gap`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityGrid {
    pub a: Vec<f64>,
    pub r: Vec<f64>,
    pub gaps: Vec<f64>,
}

impl Default for MultiplicityGrid {
    fn default() -> Self {
        Self {
            a: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            r: vec![0.9, 0.95, 1.0],
            gaps: (1..=9).map(|k| k as f64 / 10.0).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceFit {
    pub a: f64,
    pub r: f64,
    pub c: f64,
    pub points: usize,
}

/// Least-squares fit of `Δ_u = u_model − u*` to `C/(r − t)` per `(a, r)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityFit {
    pub slices: Vec<SliceFit>,
    /// Uncentered `1 − SSR/Σ Δ²` pooled over slices; 1 when `Δ ≡ 0`.
    pub r_squared: f64,
    pub max_abs_delta: f64,
}

/// Fits the deviation of a one-dimensional model from the exact field to
/// the family `C(a, r)/(r − t)`. The fit has no intercept: members of the
/// family vanish as `r − t` grows without bound.
pub fn multiplicity_probe<U: MeanVelocity, O: MeanVelocity>(
    u: &U,
    oracle: &O,
    grid: &MultiplicityGrid,
) -> Result<MultiplicityFit> {
    if u.action_dim() != 1 || oracle.action_dim() != 1 {
        return Err(contract(
            "multiplicity probe works on one-dimensional fields",
        ));
    }
    if grid.gaps.iter().any(|&g| g <= 0.0) {
        return Err(contract("multiplicity probe gaps must be positive"));
    }
    let (mut slices, mut ssr, mut sst, mut max_abs) = (Vec::new(), 0.0, 0.0, 0.0f64);
    for &a in &grid.a {
        for &r in &grid.r {
            let gaps: Vec<f64> = grid
                .gaps
                .iter()
                .copied()
                .filter(|&g| r - g >= 0.0)
                .collect();
            if gaps.is_empty() {
                continue;
            }
            let k = gaps.len();
            let at = Tensor::full(&[k, 1], a);
            let tt = Tensor::column(gaps.iter().map(|g| r - g).collect());
            let rt = Tensor::full(&[k, 1], r);
            let delta = eval_u(u, &at, &tt, &rt).sub(&eval_u(oracle, &at, &tt, &rt));
            let x: Vec<f64> = gaps.iter().map(|g| 1.0 / g).collect();
            let sxx: f64 = x.iter().map(|v| v * v).sum();
            let sxy: f64 = x.iter().zip(delta.data()).map(|(p, q)| p * q).sum();
            let c = sxy / sxx;
            for (xi, d) in x.iter().zip(delta.data()) {
                ssr += (d - c * xi).powi(2);
                sst += d * d;
                max_abs = max_abs.max(d.abs());
            }
            slices.push(SliceFit { a, r, c, points: k });
        }
    }
    let r_squared = if sst == 0.0 { 1.0 } else { 1.0 - ssr / sst };
    Ok(MultiplicityFit {
        slices,
        r_squared,
        max_abs_delta: max_abs,
    })
}

/// Measured counterparts of the critic-error and policy-fit assumptions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// `max |Q(s, a) − Q_MC(s, a)|` over the probe set.
    pub eps_q: f64,
    /// Mean distance between one-step samples and their imitation targets.
    pub eps_a: f64,
}

/// Compares the critic with Monte-Carlo returns at `(s, a)` probes and the
/// one-step policy with target actions at held-out states (one sample per
/// row, clipped).
#[allow(clippy::too_many_arguments)]
pub fn fitting_error_diagnostics<Q: ActionValue + ?Sized, U: MeanVelocity>(
    q: &Q,
    probe_s: &Tensor,
    probe_a: &Tensor,
    mc_returns: &[f64],
    u: &U,
    held_out_s: &Tensor,
    targets: &Tensor,
    rng: &mut Rng,
) -> Result<FitDiagnostics> {
    if mc_returns.len() != probe_s.rows()
        || targets.rows() != held_out_s.rows()
        || targets.rows() == 0
    {
        return Err(contract(
            "diagnostic probes and returns/targets must pair up row by row",
        ));
    }
    let values = q.value(probe_s, probe_a);
    let eps_q = values
        .data()
        .iter()
        .zip(mc_returns)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let samples = crate::meanflow::one_step_sample(u, held_out_s, 1, rng, true);
    let diff = samples.sub(targets);
    let m = diff.cols().max(1);
    let eps_a = diff
        .data()
        .chunks(m)
        .map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt())
        .sum::<f64>()
        / targets.rows() as f64;
    Ok(FitDiagnostics { eps_q, eps_a })
}

/// Discounted return of taking `a` at `s` and then acting best-of-N until
/// termination or the horizon, averaged over `rollouts`.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_q<P: CandidateSampler + ?Sized, Q: ActionValue + ?Sized>(
    env: &dyn Env,
    policy: &P,
    q: &Q,
    n: usize,
    s: &[f64],
    a: &[f64],
    rollouts: usize,
    gamma: f64,
    rng: &mut Rng,
) -> Result<f64> {
    if rollouts == 0 {
        return Err(contract("Monte-Carlo return needs at least one rollout"));
    }
    let mut total = 0.0;
    for _ in 0..rollouts {
        let mut out = env.step(s, a, rng);
        let mut ret = out.reward;
        let mut discount = gamma;
        let mut steps = 1;
        while !out.done && steps < env.max_episode_steps() {
            let st = Tensor::matrix(1, out.state.len(), out.state.clone());
            let (act, _) = best_of_n_act(policy, q, &st, n, rng)?;
            out = env.step(&out.state, act.data(), rng);
            ret += discount * out.reward;
            discount *= gamma;
            steps += 1;
        }
        total += ret;
    }
    Ok(total / rollouts as f64)
}
