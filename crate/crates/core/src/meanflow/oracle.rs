//! Closed-form velocity fields for targets whose flow is known.

use super::field::{ones_col, InstantVelocity, MeanVelocity};
use crate::autodiff::Graph;
use crate::error::{contract, Result};
use crate::Tensor;

/// Exact fields for a point-mass target at `a_star`.
///
/// From `(a, t)` every path still has to reach `a_star` at time 1 on a
/// straight line, so the instantaneous velocity is `(a_star − a)/(1 − t)`.
/// Along the flow that velocity is constant, hence the mean velocity over
/// any `[t, r]` is the same expression, independent of `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiracField {
    pub a_star: Vec<f64>,
}

impl DiracField {
    pub fn new(a_star: Vec<f64>) -> Self {
        Self { a_star }
    }

    fn velocity<G: Graph>(&self, g: &mut G, a: &G::Value, t: &G::Value) -> G::Value {
        let b = g.value(a).rows();
        let star =
            g.constant(Tensor::new(vec![1, self.a_star.len()], self.a_star.clone()).repeat_rows(b));
        let diff = g.sub(&star, a);
        let one = ones_col(g, t);
        let remaining = g.sub(&one, t);
        let inv = g.div(&one, &remaining);
        g.mul_col(&diff, &inv)
    }
}

impl MeanVelocity for DiracField {
    fn action_dim(&self) -> usize {
        self.a_star.len()
    }

    fn apply<G: Graph>(
        &self,
        g: &mut G,
        _: &[G::Value],
        a: &G::Value,
        t: &G::Value,
        _: &G::Value,
        _: &G::Value,
    ) -> G::Value {
        self.velocity(g, a, t)
    }
}

impl InstantVelocity for DiracField {
    fn action_dim(&self) -> usize {
        self.a_star.len()
    }

    fn apply<G: Graph>(
        &self,
        g: &mut G,
        _: &[G::Value],
        a: &G::Value,
        t: &G::Value,
        _: &G::Value,
    ) -> G::Value {
        self.velocity(g, a, t)
    }
}

/// Checked evaluation of the point-mass mean velocity at scalar times.
pub fn dirac_mean_velocity(a_star: &[f64], a: &Tensor, t: f64, r: f64) -> Result<Tensor> {
    if t >= 1.0 {
        return Err(contract(format!(
            "point-mass mean velocity is singular at t = {t} ≥ 1"
        )));
    }
    if !(t <= r && r <= 1.0) {
        return Err(contract(format!("need t ≤ r ≤ 1, got t = {t}, r = {r}")));
    }
    if a.cols() != a_star.len() {
        return Err(contract(format!(
            "target has {} dims, points {:?}",
            a_star.len(),
            a.shape()
        )));
    }
    let m = a_star.len();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, x)| (a_star[i % m] - x) / (1.0 - t))
        .collect();
    Ok(Tensor::new(a.shape().to_vec(), data))
}

/// Exact fields for an isotropic Gaussian target `N(mu, sigma²·I)` with an
/// independent standard-normal source.
///
/// Conditioning the joint Gaussian of `(a1 − a0, a_τ)` gives an affine
/// instantaneous velocity `α(τ)·x + β(τ)` per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianOracle {
    pub mu: Vec<f64>,
    pub sigma: f64,
}

/// Integration step for the mean velocity.
const FLOW_STEP: f64 = 1e-4;

impl GaussianOracle {
    pub fn new(mu: Vec<f64>, sigma: f64) -> Result<Self> {
        if sigma.is_nan() || sigma <= 0.0 {
            return Err(contract(format!(
                "Gaussian target needs sigma > 0, got {sigma}"
            )));
        }
        Ok(Self { mu, sigma })
    }

    /// Slope `α(τ) = (τσ² − (1−τ)) / (τ²σ² + (1−τ)²)`.
    pub fn alpha(&self, tau: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        (tau * s2 - (1.0 - tau)) / (tau * tau * s2 + (1.0 - tau) * (1.0 - tau))
    }

    /// Offset `β_d(τ) = μ_d·(1 − α(τ)·τ)`.
    pub fn beta(&self, tau: f64) -> Vec<f64> {
        let k = 1.0 - self.alpha(tau) * tau;
        self.mu.iter().map(|m| m * k).collect()
    }

    pub fn instant(&self, a: &Tensor, tau: f64) -> Tensor {
        self.check(a);
        let alpha = self.alpha(tau);
        let beta = self.beta(tau);
        let m = beta.len();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| alpha * x + beta[i % m])
            .collect();
        Tensor::new(a.shape().to_vec(), data)
    }

    /// Mean velocity over `[t, r]`: the flow map is affine in the start point,
    /// `x_r = A·a + B`, so Euler-integrate `A' = αA`, `B' = αB + β` from
    /// `A = 1, B = 0` and divide the displacement by `r − t`. At `r = t`
    /// this is the instantaneous velocity.
    pub fn mean_velocity(&self, a: &Tensor, t: f64, r: f64) -> Result<Tensor> {
        if !(0.0 <= t && t <= r && r <= 1.0) {
            return Err(contract(format!(
                "need 0 ≤ t ≤ r ≤ 1, got t = {t}, r = {r}"
            )));
        }
        self.check(a);
        if r == t {
            return Ok(self.instant(a, t));
        }
        let steps = ((r - t) / FLOW_STEP).ceil().max(1.0) as usize;
        let h = (r - t) / steps as f64;
        let m = self.mu.len();
        let mut coef_a = 1.0;
        let mut coef_b = vec![0.0; m];
        for k in 0..steps {
            let tau = t + k as f64 * h;
            let alpha = self.alpha(tau);
            let beta = self.beta(tau);
            for (b, beta) in coef_b.iter_mut().zip(&beta) {
                *b += h * (alpha * *b + beta);
            }
            coef_a += h * alpha * coef_a;
        }
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| ((coef_a - 1.0) * x + coef_b[i % m]) / (r - t))
            .collect();
        Ok(Tensor::new(a.shape().to_vec(), data))
    }

    fn check(&self, a: &Tensor) {
        assert_eq!(
            a.cols(),
            self.mu.len(),
            "contract violation: Gaussian oracle of dim {} on {:?}",
            self.mu.len(),
            a.shape()
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Eval;

    #[test]
    fn dirac_at_target_is_zero_and_from_origin_is_target() {
        let star = [0.7];
        let a = Tensor::matrix(1, 1, vec![0.7]);
        assert_eq!(
            dirac_mean_velocity(&star, &a, 0.3, 0.9).unwrap().item(),
            0.0
        );
        let zero = Tensor::matrix(1, 1, vec![0.0]);
        for r in [0.0, 0.4, 1.0] {
            assert_eq!(
                dirac_mean_velocity(&star, &zero, 0.0, r).unwrap().item(),
                0.7
            );
        }
        assert!(dirac_mean_velocity(&star, &zero, 1.0, 1.0).is_err());
    }

    #[test]
    fn dirac_graph_field_matches_checked_form() {
        let field = DiracField::new(vec![0.7, -0.2]);
        let a = Tensor::matrix(2, 2, vec![0.1, 0.5, -1.0, 2.0]);
        let t = Tensor::column(vec![0.25, 0.25]);
        let got = MeanVelocity::apply(&field, &mut Eval, &[], &a, &t, &t, &Tensor::zeros(&[2, 0]));
        let want = dirac_mean_velocity(&[0.7, -0.2], &a, 0.25, 0.5).unwrap();
        assert!(got.sub(&want).max_abs() < 1e-15);
    }

    #[test]
    fn gaussian_velocity_at_endpoints() {
        let o = GaussianOracle::new(vec![1.5, -0.5], 0.5).unwrap();
        // at τ = 0 the path point is pure noise: E[a1 − a0 | a0 = x] = μ − x
        assert_eq!(o.alpha(0.0), -1.0);
        // at τ = 1 it is the target itself: E[a1 − a0 | a1 = x] = x
        assert_eq!(o.alpha(1.0), 1.0);
        assert!(o.beta(1.0).iter().all(|b| b.abs() < 1e-15));
        assert!(GaussianOracle::new(vec![0.0], 0.0).is_err());
    }
}
