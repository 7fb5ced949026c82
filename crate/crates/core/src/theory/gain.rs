use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::{Rng, Tensor};

/// Fewest Monte-Carlo draws accepted by [`estimate_gain`].
pub const MIN_GAIN_SAMPLES: usize = 10_000;

/// Monte-Carlo estimate of the expected best-of-N improvement over the
/// policy value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainEstimate {
    pub n: usize,
    pub delta_hat: f64,
    pub std_err: f64,
    pub samples: usize,
}

/// Draws `samples` groups of `n` actions and averages
/// `d = max_i Q(a_i) − mean_i Q(a_i)`. The group mean is an unbiased
/// estimate of the policy value, so `E[d]` is the gain, and every `d ≥ 0`.
///
/// `q` maps an action matrix `[k×m]` to `[k×1]`; `sampler(k, rng)` returns
/// `k` policy actions.
pub fn estimate_gain<Q, S>(
    q: Q,
    mut sampler: S,
    n: usize,
    samples: usize,
    rng: &mut Rng,
) -> Result<GainEstimate>
where
    Q: Fn(&Tensor) -> Tensor,
    S: FnMut(usize, &mut Rng) -> Tensor,
{
    if samples < MIN_GAIN_SAMPLES {
        return Err(contract(format!(
            "gain estimate needs at least {MIN_GAIN_SAMPLES} samples, got {samples}"
        )));
    }
    if n == 0 {
        return Err(contract("gain estimate needs N ≥ 1"));
    }
    // bounded chunks keep memory flat for large N
    let chunk = (1 << 18) / n;
    let (mut sum, mut sum_sq, mut done) = (0.0, 0.0, 0);
    while done < samples {
        let k = chunk.max(1).min(samples - done);
        let actions = sampler(k * n, rng);
        let values = q(&actions);
        for group in values.data().chunks(n) {
            let max = group.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let d = group.iter().map(|v| max - v).sum::<f64>() / n as f64;
            sum += d;
            sum_sq += d * d;
        }
        done += k;
    }
    let m = samples as f64;
    let mean = sum / m;
    let var = ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0);
    Ok(GainEstimate {
        n,
        delta_hat: mean,
        std_err: (var / m).sqrt(),
        samples,
    })
}

/// Outcome of the non-negativity, monotonicity and `N = 1` checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub estimates: Vec<GainEstimate>,
    pub non_negative: bool,
    pub monotone: bool,
    pub single_is_zero: bool,
    pub violations: Vec<String>,
    pub pass: bool,
}

/// Checks estimates sorted by `N` against 3σ bands: every gain ≥ −3σ, each
/// gain ≥ its predecessor − 3σ of the difference, and the `N = 1` gain
/// within 3σ of zero when present.
pub fn check_gain_properties(estimates: &[GainEstimate]) -> GainReport {
    let mut sorted = estimates.to_vec();
    sorted.sort_by_key(|e| e.n);
    let mut violations = Vec::new();
    let mut non_negative = true;
    for e in &sorted {
        if e.delta_hat < -3.0 * e.std_err {
            non_negative = false;
            violations.push(format!(
                "N={}: gain {} below −3σ ({})",
                e.n, e.delta_hat, e.std_err
            ));
        }
    }
    let mut monotone = true;
    for w in sorted.windows(2) {
        if w[1].delta_hat < w[0].delta_hat - 3.0 * w[0].std_err.hypot(w[1].std_err) {
            monotone = false;
            violations.push(format!(
                "N={} → N={}: gain fell from {} to {}",
                w[0].n, w[1].n, w[0].delta_hat, w[1].delta_hat
            ));
        }
    }
    let single_is_zero = sorted
        .iter()
        .filter(|e| e.n == 1)
        .all(|e| e.delta_hat.abs() <= 3.0 * e.std_err);
    if !single_is_zero {
        violations.push("N=1 gain is not zero within 3σ".to_string());
    }
    let pass = non_negative && monotone && single_is_zero;
    GainReport {
        estimates: sorted,
        non_negative,
        monotone,
        single_is_zero,
        violations,
        pass,
    }
}

/// `E[max(X₁, X₂)]` for independent standard normals by quadrature of
/// `∫ x·2φ(x)Φ(x) dx`, with `Φ` itself accumulated from `φ` on the same grid.
pub fn expected_max_of_two_normals() -> f64 {
    let (lo, hi, steps) = (-12.0f64, 12.0f64, 240_000usize);
    let h = (hi - lo) / steps as f64;
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut cdf = 0.0;
    let mut total = 0.0;
    let mut prev = lo * 2.0 * phi(lo) * cdf;
    for k in 1..=steps {
        let x0 = lo + (k - 1) as f64 * h;
        let x = lo + k as f64 * h;
        // Simpson on each cell for Φ, trapezoid on the outer integral
        cdf += h / 6.0 * (phi(x0) + 4.0 * phi(0.5 * (x0 + x)) + phi(x));
        let cur = x * 2.0 * phi(x) * cdf;
        total += 0.5 * h * (prev + cur);
        prev = cur;
    }
    total
}
