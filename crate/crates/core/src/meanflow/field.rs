//! Velocity fields: learned networks and hand-wired closed forms share one
//! interface so losses, samplers and probes can run on either.
//!
//! Network input layouts are fixed so serialized parameters stay portable:
//! `[a | t | r | s]` for mean velocities and `[a | t | s]` for instantaneous
//! velocities, with each time block replaced by its embedding when one is
//! configured and the state block omitted when the state dimension is 0.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Eval, Graph};
use crate::error::{contract, Result};
use crate::nets::{MlpParams, NetSpec};
use crate::{Rng, Tensor};

/// Mean velocity `u(a, t, r, s)` over the interval `[t, r]`.
///
/// `a` is `[b×m]`, `t` and `r` are `[b×1]` columns, `s` is `[b×n]`.
pub trait MeanVelocity {
    fn action_dim(&self) -> usize;

    /// Registers trainable tensors; closed-form fields have none.
    fn bind<G: Graph>(&self, _g: &mut G) -> Vec<G::Value> {
        Vec::new()
    }

    fn apply<G: Graph>(
        &self,
        g: &mut G,
        bound: &[G::Value],
        a: &G::Value,
        t: &G::Value,
        r: &G::Value,
        s: &G::Value,
    ) -> G::Value;

    fn eval(&self, a: &Tensor, t: &Tensor, r: &Tensor, s: &Tensor) -> Tensor {
        let mut g = Eval;
        let bound = self.bind(&mut g);
        self.apply(&mut g, &bound, a, t, r, s)
    }
}

/// Instantaneous velocity `v(a, t, s)`.
pub trait InstantVelocity {
    fn action_dim(&self) -> usize;

    fn bind<G: Graph>(&self, _g: &mut G) -> Vec<G::Value> {
        Vec::new()
    }

    fn apply<G: Graph>(
        &self,
        g: &mut G,
        bound: &[G::Value],
        a: &G::Value,
        t: &G::Value,
        s: &G::Value,
    ) -> G::Value;

    fn eval(&self, a: &Tensor, t: &Tensor, s: &Tensor) -> Tensor {
        let mut g = Eval;
        let bound = self.bind(&mut g);
        self.apply(&mut g, &bound, a, t, s)
    }
}

/// How scalar times are presented to a network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeEmbedding {
    /// The time itself as one input feature.
    #[default]
    Raw,
    /// `[sin(ω_k t), cos(ω_k t)]` for `ω_k = π·2^k`, `k < dims/2`.
    Sinusoidal { dims: usize },
}

impl TimeEmbedding {
    pub fn width(&self) -> usize {
        match *self {
            TimeEmbedding::Raw => 1,
            TimeEmbedding::Sinusoidal { dims } => dims,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            TimeEmbedding::Sinusoidal { dims } if dims == 0 || dims % 2 == 1 => Err(contract(
                format!("sinusoidal time embedding needs a positive even width, got {dims}"),
            )),
            _ => Ok(()),
        }
    }

    fn frequencies(&self) -> Tensor {
        let k = self.width() / 2;
        Tensor::matrix(
            1,
            k,
            (0..k)
                .map(|i| std::f64::consts::PI * 2f64.powi(i as i32))
                .collect(),
        )
    }

    fn embed<G: Graph>(&self, g: &mut G, t: &G::Value) -> G::Value {
        match self {
            TimeEmbedding::Raw => t.clone(),
            TimeEmbedding::Sinusoidal { .. } => {
                let w = g.constant(self.frequencies());
                let phase = g.matmul(t, &w);
                let sin = g.sin(&phase);
                let cos = g.cos(&phase);
                g.concat_cols(&[&sin, &cos])
            }
        }
    }

    fn embed_tensor(&self, t: &Tensor) -> Tensor {
        match self {
            TimeEmbedding::Raw => t.clone(),
            TimeEmbedding::Sinusoidal { .. } => {
                let phase = t.matmul(&self.frequencies());
                Tensor::concat_cols(&[&phase.map(f64::sin), &phase.map(f64::cos)])
            }
        }
    }
}

/// Architecture knobs shared by the policy networks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub action_dim: usize,
    pub state_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub layer_norm: bool,
    pub embedding: TimeEmbedding,
}

impl FieldSpec {
    fn net_spec(&self, time_inputs: usize) -> Result<NetSpec> {
        self.embedding.validate()?;
        let input = self.action_dim + time_inputs * self.embedding.width() + self.state_dim;
        NetSpec::new(
            input,
            self.action_dim,
            self.width,
            self.depth,
            self.layer_norm,
        )
    }
}

fn assemble<G: Graph>(
    g: &mut G,
    spec: &FieldSpec,
    a: &G::Value,
    times: &[&G::Value],
    s: &G::Value,
) -> G::Value {
    let embedded: Vec<G::Value> = times.iter().map(|t| spec.embedding.embed(g, t)).collect();
    let mut parts: Vec<&G::Value> = vec![a];
    parts.extend(embedded.iter());
    if spec.state_dim > 0 {
        parts.push(s);
    }
    g.concat_cols(&parts)
}

fn assemble_tensor(spec: &FieldSpec, a: &Tensor, times: &[&Tensor], s: &Tensor) -> Tensor {
    let embedded: Vec<Tensor> = times
        .iter()
        .map(|t| spec.embedding.embed_tensor(t))
        .collect();
    let mut parts: Vec<&Tensor> = vec![a];
    parts.extend(embedded.iter());
    if spec.state_dim > 0 {
        parts.push(s);
    }
    Tensor::concat_cols(&parts)
}

/// Learned mean velocity field.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanFlowNet {
    pub spec: FieldSpec,
    pub net: MlpParams,
}

impl MeanFlowNet {
    pub fn init(spec: FieldSpec, rng: &mut Rng) -> Result<Self> {
        let net = MlpParams::init(spec.net_spec(2)?, rng)?;
        Ok(Self { spec, net })
    }

    pub fn from_params(spec: FieldSpec, net: MlpParams) -> Result<Self> {
        if *net.spec() != spec.net_spec(2)? {
            return Err(contract(format!(
                "parameters {:?} do not fit field {spec:?}",
                net.spec()
            )));
        }
        Ok(Self { spec, net })
    }
}

impl MeanVelocity for MeanFlowNet {
    fn action_dim(&self) -> usize {
        self.spec.action_dim
    }

    fn bind<G: Graph>(&self, g: &mut G) -> Vec<G::Value> {
        self.net.bind(g)
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
        let x = assemble(g, &self.spec, a, &[t, r], s);
        self.net.apply(g, bound, &x)
    }

    fn eval(&self, a: &Tensor, t: &Tensor, r: &Tensor, s: &Tensor) -> Tensor {
        self.net
            .forward(&assemble_tensor(&self.spec, a, &[t, r], s))
    }
}

/// Learned instantaneous velocity field (the multi-step baseline).
#[derive(Clone, Debug, PartialEq)]
pub struct FlowMatchNet {
    pub spec: FieldSpec,
    pub net: MlpParams,
}

impl FlowMatchNet {
    pub fn init(spec: FieldSpec, rng: &mut Rng) -> Result<Self> {
        let net = MlpParams::init(spec.net_spec(1)?, rng)?;
        Ok(Self { spec, net })
    }

    pub fn from_params(spec: FieldSpec, net: MlpParams) -> Result<Self> {
        if *net.spec() != spec.net_spec(1)? {
            return Err(contract(format!(
                "parameters {:?} do not fit field {spec:?}",
                net.spec()
            )));
        }
        Ok(Self { spec, net })
    }
}

impl InstantVelocity for FlowMatchNet {
    fn action_dim(&self) -> usize {
        self.spec.action_dim
    }

    fn bind<G: Graph>(&self, g: &mut G) -> Vec<G::Value> {
        self.net.bind(g)
    }

    fn apply<G: Graph>(
        &self,
        g: &mut G,
        bound: &[G::Value],
        a: &G::Value,
        t: &G::Value,
        s: &G::Value,
    ) -> G::Value {
        let x = assemble(g, &self.spec, a, &[t], s);
        self.net.apply(g, bound, &x)
    }

    fn eval(&self, a: &Tensor, t: &Tensor, s: &Tensor) -> Tensor {
        self.net.forward(&assemble_tensor(&self.spec, a, &[t], s))
    }
}

/// The same velocity everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantField(pub Vec<f64>);

impl ConstantField {
    fn broadcast<G: Graph>(&self, g: &mut G, a: &G::Value) -> G::Value {
        let b = g.value(a).rows();
        let c = Tensor::new(vec![1, self.0.len()], self.0.clone()).repeat_rows(b);
        g.constant(c)
    }
}

impl MeanVelocity for ConstantField {
    fn action_dim(&self) -> usize {
        self.0.len()
    }

    fn apply<G: Graph>(
        &self,
        g: &mut G,
        _: &[G::Value],
        a: &G::Value,
        _: &G::Value,
        _: &G::Value,
        _: &G::Value,
    ) -> G::Value {
        self.broadcast(g, a)
    }
}

impl InstantVelocity for ConstantField {
    fn action_dim(&self) -> usize {
        self.0.len()
    }

    fn apply<G: Graph>(
        &self,
        g: &mut G,
        _: &[G::Value],
        a: &G::Value,
        _: &G::Value,
        _: &G::Value,
    ) -> G::Value {
        self.broadcast(g, a)
    }
}

/// `u(a, t, r, s) = a`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityField(pub usize);

impl MeanVelocity for IdentityField {
    fn action_dim(&self) -> usize {
        self.0
    }

    fn apply<G: Graph>(
        &self,
        _: &mut G,
        _: &[G::Value],
        a: &G::Value,
        _: &G::Value,
        _: &G::Value,
        _: &G::Value,
    ) -> G::Value {
        a.clone()
    }
}

/// Column of ones matching the row count of `like`.
pub(crate) fn ones_col<G: Graph>(g: &mut G, like: &G::Value) -> G::Value {
    let b = g.value(like).rows();
    g.constant(Tensor::full(&[b, 1], 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(state_dim: usize, embedding: TimeEmbedding) -> FieldSpec {
        FieldSpec {
            action_dim: 2,
            state_dim,
            width: 16,
            depth: 2,
            layer_norm: false,
            embedding,
        }
    }

    #[test]
    fn input_layout_widths() {
        let mut rng = Rng::new(1);
        let u = MeanFlowNet::init(spec(3, TimeEmbedding::Raw), &mut rng).unwrap();
        assert_eq!(u.net.spec().input_dim, 2 + 1 + 1 + 3);
        let v =
            FlowMatchNet::init(spec(0, TimeEmbedding::Sinusoidal { dims: 4 }), &mut rng).unwrap();
        assert_eq!(v.net.spec().input_dim, 2 + 4);
        assert!(
            MeanFlowNet::init(spec(0, TimeEmbedding::Sinusoidal { dims: 3 }), &mut rng).is_err()
        );
    }

    #[test]
    fn fast_path_matches_graph_path() {
        let mut rng = Rng::new(2);
        for emb in [TimeEmbedding::Raw, TimeEmbedding::Sinusoidal { dims: 6 }] {
            let u = MeanFlowNet::init(spec(1, emb), &mut rng).unwrap();
            let a = rng.normal_tensor(&[5, 2]);
            let t = rng.uniform_tensor(&[5, 1], 0.0, 1.0);
            let r = rng.uniform_tensor(&[5, 1], 0.0, 1.0);
            let s = rng.normal_tensor(&[5, 1]);
            let mut g = Eval;
            let bound = u.bind(&mut g);
            let slow = u.apply(&mut g, &bound, &a, &t, &r, &s);
            let fast = u.eval(&a, &t, &r, &s);
            assert!(slow.sub(&fast).max_abs() < 1e-12);
            assert_eq!(fast.shape(), &[5, 2]);
        }
    }

    #[test]
    fn output_shape_matches_action_for_any_batch() {
        let mut rng = Rng::new(3);
        let v = FlowMatchNet::init(spec(0, TimeEmbedding::Raw), &mut rng).unwrap();
        for b in [1, 7, 64] {
            let out = v.eval(
                &Tensor::zeros(&[b, 2]),
                &Tensor::zeros(&[b, 1]),
                &Tensor::zeros(&[b, 0]),
            );
            assert_eq!(out.shape(), &[b, 2]);
        }
    }
}
