use super::field::{InstantVelocity, MeanVelocity};
use crate::error::{contract, Result};
use crate::{Rng, Tensor};

fn expand_states(s: &Tensor, per_state: usize) -> Tensor {
    if per_state == 1 {
        s.clone()
    } else {
        s.repeat_rows(per_state)
    }
}

/// One network evaluation per sample: `a = ε + u(ε, 0, 1, s)`.
///
/// Draws `per_state` samples for every row of `s` (`[k×n]`, `n` may be 0);
/// output rows are grouped by state. `clip` bounds results to `[−1, 1]`.
pub fn one_step_sample<U: MeanVelocity>(
    u: &U,
    s: &Tensor,
    per_state: usize,
    rng: &mut Rng,
    clip: bool,
) -> Tensor {
    let rows = s.rows() * per_state;
    let eps = rng.normal_tensor(&[rows, u.action_dim()]);
    let t = Tensor::zeros(&[rows, 1]);
    let r = Tensor::full(&[rows, 1], 1.0);
    let a = eps.add(&u.eval(&eps, &t, &r, &expand_states(s, per_state)));
    if clip {
        a.clip(-1.0, 1.0)
    } else {
        a
    }
}

/// `steps` Euler steps of the instantaneous field from fresh noise:
/// `a ← a + v(a, k/T, s)/T` for `k = 0..T`.
pub fn euler_sample<V: InstantVelocity>(
    v: &V,
    s: &Tensor,
    per_state: usize,
    steps: usize,
    rng: &mut Rng,
    clip: bool,
) -> Result<Tensor> {
    if steps == 0 {
        return Err(contract("Euler sampler needs at least one step"));
    }
    let rows = s.rows() * per_state;
    let states = expand_states(s, per_state);
    let mut a = rng.normal_tensor(&[rows, v.action_dim()]);
    let h = 1.0 / steps as f64;
    for k in 0..steps {
        let t = Tensor::full(&[rows, 1], k as f64 * h);
        let vel = v.eval(&a, &t, &states);
        a.axpy(h, &vel);
    }
    Ok(if clip { a.clip(-1.0, 1.0) } else { a })
}
