use super::{MlpParams, NetSpec};
use crate::autodiff::Graph;
use crate::error::Result;
use crate::{Rng, Tensor};

/// K independently initialized critics over the input layout `[s | a]`,
/// aggregated by their arithmetic mean.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticEnsemble {
    pub members: Vec<MlpParams>,
}

impl CriticEnsemble {
    pub fn init(
        state_dim: usize,
        action_dim: usize,
        width: usize,
        depth: usize,
        layer_norm: bool,
        size: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let spec = NetSpec::new(state_dim + action_dim, 1, width, depth, layer_norm)?;
        let members = (0..size.max(1))
            .map(|_| MlpParams::init(spec, rng))
            .collect::<Result<_>>()?;
        Ok(Self { members })
    }

    pub fn spec(&self) -> &NetSpec {
        self.members[0].spec()
    }

    /// Every member's output, `[b×1]` each.
    pub fn member_values(&self, s: &Tensor, a: &Tensor) -> Vec<Tensor> {
        let x = Tensor::concat_cols(&[s, a]);
        self.members.iter().map(|m| m.forward(&x)).collect()
    }

    /// Ensemble mean `[b×1]`.
    pub fn mean(&self, s: &Tensor, a: &Tensor) -> Tensor {
        let vals = self.member_values(s, a);
        let k = vals.len() as f64;
        let mut acc = vals[0].clone();
        for v in &vals[1..] {
            acc.add_assign(v);
        }
        acc.scale(1.0 / k)
    }

    /// All member tensors concatenated, for a single optimizer state.
    pub fn flat_tensors(&self) -> Vec<Tensor> {
        self.members
            .iter()
            .flat_map(|m| m.tensors().iter().cloned())
            .collect()
    }

    pub fn set_flat_tensors(&mut self, flat: &[Tensor]) {
        let mut i = 0;
        for m in &mut self.members {
            for t in m.tensors_mut() {
                *t = flat[i].clone();
                i += 1;
            }
        }
    }

    pub fn apply_members<G: Graph>(
        &self,
        g: &mut G,
        bound: &[Vec<G::Value>],
        s: &G::Value,
        a: &G::Value,
    ) -> Vec<G::Value> {
        let x = g.concat_cols(&[s, a]);
        self.members
            .iter()
            .zip(bound)
            .map(|(m, b)| m.apply(g, b, &x))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_is_member_mean() {
        let mut rng = Rng::new(3);
        let q = CriticEnsemble::init(3, 2, 8, 2, true, 2, &mut rng).unwrap();
        let s = rng.normal_tensor(&[5, 3]);
        let a = rng.normal_tensor(&[5, 2]);
        let v = q.member_values(&s, &a);
        let m = q.mean(&s, &a);
        for i in 0..5 {
            assert_eq!(m.data()[i], (v[0].data()[i] + v[1].data()[i]) / 2.0);
        }
        assert_ne!(q.members[0], q.members[1]);
    }
}
