//! Feed-forward networks, optimizer and target-network averaging.

mod adam;
mod checkpoint;
mod critic;

pub use adam::{AdamConfig, AdamState};
pub use critic::CriticEnsemble;

use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, Graph};
use crate::error::{contract, Result};
use crate::{Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
}

/// Shape of a multilayer perceptron: `depth` hidden layers of `width`
/// units, each affine → (layer norm) → activation, then a final affine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub activation: Activation,
    pub layer_norm: bool,
}

impl NetSpec {
    pub fn new(
        input_dim: usize,
        output_dim: usize,
        width: usize,
        depth: usize,
        layer_norm: bool,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            output_dim,
            width,
            depth,
            activation: Activation::Gelu,
            layer_norm,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.width == 0 || self.depth == 0 {
            return Err(contract(format!(
                "degenerate network spec {self:?}: every extent must be at least 1"
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer, input side first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![(self.input_dim, self.width)];
        dims.extend(std::iter::repeat_n(
            (self.width, self.width),
            self.depth - 1,
        ));
        dims.push((self.width, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| (i + 1) * o).sum()
    }
}

/// Weights and biases, stored `[W₀, b₀, W₁, b₁, …]` with `W` shaped
/// `[fan_in × fan_out]` so a batch `[b × fan_in]` multiplies on the left.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    spec: NetSpec,
    tensors: Vec<Tensor>,
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: NetSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let mut tensors = Vec::new();
        for (fan_in, fan_out) in spec.layer_dims() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            tensors.push(rng.uniform_tensor(&[fan_in, fan_out], -bound, bound));
            tensors.push(Tensor::zeros(&[fan_out]));
        }
        Ok(Self { spec, tensors })
    }

    pub fn from_tensors(spec: NetSpec, tensors: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if tensors.len() != 2 * dims.len() {
            return Err(contract(format!(
                "expected {} tensors, got {}",
                2 * dims.len(),
                tensors.len()
            )));
        }
        for (l, (i, o)) in dims.iter().enumerate() {
            if tensors[2 * l].shape() != [*i, *o] || tensors[2 * l + 1].shape() != [*o] {
                return Err(contract(format!(
                    "layer {l} tensors do not match spec {spec:?}"
                )));
            }
        }
        Ok(Self { spec, tensors })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Registers every tensor with `g`, in declaration order.
    pub fn bind<G: Graph>(&self, g: &mut G) -> Vec<G::Value> {
        self.tensors.iter().map(|t| g.param(t)).collect()
    }

    /// Forward pass through any graph, using tensors from [`Self::bind`].
    pub fn apply<G: Graph>(&self, g: &mut G, bound: &[G::Value], x: &G::Value) -> G::Value {
        self.check_input(g.value(x));
        let layers = self.spec.layer_dims().len();
        let mut h = x.clone();
        for l in 0..layers {
            let z = g.matmul(&h, &bound[2 * l]);
            let z = g.add_row(&z, &bound[2 * l + 1]);
            h = if l + 1 == layers {
                z
            } else if self.spec.layer_norm {
                let n = g.layer_norm(&z);
                g.gelu(&n)
            } else {
                g.gelu(&z)
            };
        }
        h
    }

    /// Inference-only forward pass.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.check_input(x);
        let layers = self.spec.layer_dims().len();
        let mut h = x.matmul(&self.tensors[0]).add_row(&self.tensors[1]);
        for l in 1..layers {
            if self.spec.layer_norm {
                h = kernels::layer_norm(&h).0;
            }
            for v in h.data_mut() {
                *v = kernels::gelu(*v);
            }
            h = h
                .matmul(&self.tensors[2 * l])
                .add_row(&self.tensors[2 * l + 1]);
        }
        h
    }

    fn check_input(&self, x: &Tensor) {
        assert!(
            x.shape().len() == 2 && x.shape()[1] == self.spec.input_dim,
            "contract violation: network expects [batch×{}] input, got {:?}",
            self.spec.input_dim,
            x.shape()
        );
    }
}

/// `target ← (1−τ)·target + τ·online`, elementwise.
pub fn polyak_update(target: &mut MlpParams, online: &MlpParams, tau: f64) -> Result<()> {
    if target.spec != online.spec {
        return Err(contract(format!(
            "polyak update between different specs {:?} and {:?}",
            target.spec, online.spec
        )));
    }
    for (t, o) in target.tensors.iter_mut().zip(&online.tensors) {
        for (a, b) in t.data_mut().iter_mut().zip(o.data()) {
            *a = (1.0 - tau) * *a + tau * b;
        }
    }
    Ok(())
}
