//! Generate-then-select action choice.

use crate::error::{contract, Result};
use crate::meanflow::{euler_sample, one_step_sample, InstantVelocity, MeanVelocity};
use crate::nets::CriticEnsemble;
use crate::{Rng, Tensor};

/// A scalar score per `(state, action)` row, `[b×1]`.
pub trait ActionValue {
    fn value(&self, s: &Tensor, a: &Tensor) -> Tensor;
}

impl ActionValue for CriticEnsemble {
    fn value(&self, s: &Tensor, a: &Tensor) -> Tensor {
        self.mean(s, a)
    }
}

/// Proposes actions in `[−1, 1]`; `n` per state row, grouped by state.
pub trait CandidateSampler {
    fn action_dim(&self) -> usize;
    fn candidates(&self, s: &Tensor, n: usize, rng: &mut Rng) -> Result<Tensor>;
}

/// One network evaluation per candidate.
pub struct OneStep<'a, U>(pub &'a U);

impl<U: MeanVelocity> CandidateSampler for OneStep<'_, U> {
    fn action_dim(&self) -> usize {
        self.0.action_dim()
    }

    fn candidates(&self, s: &Tensor, n: usize, rng: &mut Rng) -> Result<Tensor> {
        Ok(one_step_sample(self.0, s, n, rng, true))
    }
}

/// Multi-step Euler integration of an instantaneous field.
pub struct EulerSteps<'a, V> {
    pub field: &'a V,
    pub steps: usize,
}

impl<V: InstantVelocity> CandidateSampler for EulerSteps<'_, V> {
    fn action_dim(&self) -> usize {
        self.field.action_dim()
    }

    fn candidates(&self, s: &Tensor, n: usize, rng: &mut Rng) -> Result<Tensor> {
        euler_sample(self.field, s, n, self.steps, rng, true)
    }
}

/// Index of the largest value in each consecutive group of `n`; the first
/// of equal maxima wins.
pub fn select_best(values: &Tensor, n: usize) -> Vec<usize> {
    values
        .data()
        .chunks(n)
        .map(|group| {
            let mut best = 0;
            for (i, &v) in group.iter().enumerate() {
                if v > group[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// For every state row, `n` candidates and the one with the highest score.
/// Returns `(chosen [k×m], candidates [k·n×m])`.
pub fn best_of_n_act<P: CandidateSampler + ?Sized, Q: ActionValue + ?Sized>(
    policy: &P,
    q: &Q,
    s: &Tensor,
    n: usize,
    rng: &mut Rng,
) -> Result<(Tensor, Tensor)> {
    if n == 0 {
        return Err(contract("best-of-N needs at least one candidate"));
    }
    let candidates = policy.candidates(s, n, rng)?;
    if n == 1 {
        return Ok((candidates.clone(), candidates));
    }
    let scores = q.value(&s.repeat_rows(n), &candidates);
    let rows: Vec<usize> = select_best(&scores, n)
        .iter()
        .enumerate()
        .map(|(k, &i)| k * n + i)
        .collect();
    Ok((candidates.gather_rows(&rows), candidates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanflow::ConstantField;

    struct Fixed(Tensor);

    impl CandidateSampler for Fixed {
        fn action_dim(&self) -> usize {
            self.0.cols()
        }

        fn candidates(&self, s: &Tensor, n: usize, _: &mut Rng) -> Result<Tensor> {
            assert_eq!(self.0.rows(), s.rows() * n);
            Ok(self.0.clone())
        }
    }

    struct NegDist([f64; 2]);

    impl ActionValue for NegDist {
        fn value(&self, _: &Tensor, a: &Tensor) -> Tensor {
            Tensor::column(
                (0..a.rows())
                    .map(|i| {
                        -((a.get2(i, 0) - self.0[0]).powi(2) + (a.get2(i, 1) - self.0[1]).powi(2))
                    })
                    .collect(),
            )
        }
    }

    #[test]
    fn ties_go_to_first() {
        assert_eq!(
            select_best(&Tensor::column(vec![1.0, 3.0, 3.0, 0.0, 0.0, 0.0]), 3),
            vec![1, 0]
        );
    }

    #[test]
    fn single_candidate_ignores_critic() {
        let c = Tensor::from_rows(&[vec![0.1, 0.2]]);
        let (a, _) = best_of_n_act(
            &Fixed(c.clone()),
            &NegDist([5.0, 5.0]),
            &Tensor::zeros(&[1, 1]),
            1,
            &mut Rng::new(0),
        )
        .unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn picks_nearest_to_peak_per_state() {
        let c = Tensor::from_rows(&[
            vec![0.0, 0.0],
            vec![0.5, 0.5],
            vec![-0.5, 0.5],
            vec![0.6, 0.7],
            vec![0.0, 0.1],
            vec![1.0, 1.0],
        ]);
        let (a, _) = best_of_n_act(
            &Fixed(c),
            &NegDist([0.6, 0.6]),
            &Tensor::zeros(&[2, 1]),
            3,
            &mut Rng::new(0),
        )
        .unwrap();
        assert_eq!(a, Tensor::from_rows(&[vec![0.5, 0.5], vec![0.6, 0.7]]));
    }

    #[test]
    fn one_step_candidates_are_clipped_and_reproducible() {
        let u = ConstantField(vec![3.0, -3.0]);
        let s = Tensor::zeros(&[2, 1]);
        let a = OneStep(&u).candidates(&s, 4, &mut Rng::new(1)).unwrap();
        let b = OneStep(&u).candidates(&s, 4, &mut Rng::new(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[8, 2]);
        assert!(a.data().iter().all(|x| x.abs() <= 1.0));
    }
}
