//! Finite-difference audit of every derivative the training code relies on.
//!
//! Gradients of losses with a regression target are checked against central
//! differences with that target held at its current value, which is the
//! function the optimizer actually differentiates.

use serde::{Deserialize, Serialize};

use crate::autodiff::{jvp, DualTensor, Forward, Graph, Tape, Var};
use crate::error::Result;
use crate::meanflow::{
    cfm_loss_grad, mf_target, policy_loss_grad, total_time_derivative, FieldSpec, FlowBatch,
    FlowMatchNet, MeanFlowNet, MeanVelocity, TimeEmbedding, TimeSampling,
};
use crate::nets::{CriticEnsemble, MlpParams, NetSpec};
use crate::rl::{critic_loss_against, td_targets, OneStep, TdConfig, Transition, TransitionBatch};
use crate::{Rng, Tensor};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Largest accepted relative error against finite differences.
pub const FD_TOLERANCE: f64 = 1e-4;
/// Largest accepted relative gap between `gᵀ(Jv)` and `(Jᵀg)ᵀv`.
pub const CROSS_MODE_TOLERANCE: f64 = 1e-10;

/// `|a − b| / max(|a|, |b|, 1e-4)`. The floor keeps entries that are zero
/// up to rounding from dominating the report.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Prim {
    Matmul,
    Add,
    Sub,
    Mul,
    Div,
    AddRow,
    MulCol,
    Scale,
    Gelu,
    LayerNorm,
    Sin,
    Cos,
    Concat,
    Sum,
    StopGradient,
}

pub(crate) const PRIMITIVES: [Prim; 15] = [
    Prim::Matmul,
    Prim::Add,
    Prim::Sub,
    Prim::Mul,
    Prim::Div,
    Prim::AddRow,
    Prim::MulCol,
    Prim::Scale,
    Prim::Gelu,
    Prim::LayerNorm,
    Prim::Sin,
    Prim::Cos,
    Prim::Concat,
    Prim::Sum,
    Prim::StopGradient,
];

impl Prim {
    pub(crate) fn name(self) -> &'static str {
        match self {
            Prim::Matmul => "matmul",
            Prim::Add => "add",
            Prim::Sub => "sub",
            Prim::Mul => "mul",
            Prim::Div => "div",
            Prim::AddRow => "add_row",
            Prim::MulCol => "mul_col",
            Prim::Scale => "scale",
            Prim::Gelu => "gelu",
            Prim::LayerNorm => "layer_norm",
            Prim::Sin => "sin",
            Prim::Cos => "cos",
            Prim::Concat => "concat_cols",
            Prim::Sum => "sum",
            Prim::StopGradient => "stop_gradient",
        }
    }

    fn input_shapes(self) -> Vec<Vec<usize>> {
        match self {
            Prim::Matmul => vec![vec![3, 4], vec![4, 2]],
            Prim::Add | Prim::Sub | Prim::Mul | Prim::Div => vec![vec![3, 4], vec![3, 4]],
            Prim::AddRow => vec![vec![3, 4], vec![4]],
            Prim::MulCol => vec![vec![3, 4], vec![3, 1]],
            Prim::Concat => vec![vec![3, 2], vec![3, 3]],
            _ => vec![vec![3, 4]],
        }
    }

    pub(crate) fn apply<G: Graph>(self, g: &mut G, xs: &[G::Value]) -> G::Value {
        match self {
            Prim::Matmul => g.matmul(&xs[0], &xs[1]),
            Prim::Add => g.add(&xs[0], &xs[1]),
            Prim::Sub => g.sub(&xs[0], &xs[1]),
            Prim::Mul => g.mul(&xs[0], &xs[1]),
            Prim::Div => g.div(&xs[0], &xs[1]),
            Prim::AddRow => g.add_row(&xs[0], &xs[1]),
            Prim::MulCol => g.mul_col(&xs[0], &xs[1]),
            Prim::Scale => g.scale(&xs[0], -1.7),
            Prim::Gelu => g.gelu(&xs[0]),
            Prim::LayerNorm => g.layer_norm(&xs[0]),
            Prim::Sin => g.sin(&xs[0]),
            Prim::Cos => g.cos(&xs[0]),
            Prim::Concat => g.concat_cols(&[&xs[0], &xs[1]]),
            Prim::Sum => g.sum(&xs[0]),
            Prim::StopGradient => g.stop_gradient(&xs[0]),
        }
    }

    pub(crate) fn random_inputs(self, rng: &mut Rng) -> Vec<Tensor> {
        self.input_shapes()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let t = rng.normal_tensor(s);
                // keep divisors away from zero
                if self == Prim::Div && i == 1 {
                    t.map(|v| v.signum() * (0.5 + v.abs()))
                } else {
                    t
                }
            })
            .collect()
    }
}

/// Worst error seen for one component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub component: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub configs: usize,
}

impl GradcheckEntry {
    pub fn pass(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn pass(&self) -> bool {
        self.entries.iter().all(GradcheckEntry::pass)
    }

    pub fn entry(&self, component: &str) -> Option<&GradcheckEntry> {
        self.entries.iter().find(|e| e.component == component)
    }

    fn record(&mut self, component: String, err: f64, tolerance: f64) {
        match self.entries.iter_mut().find(|e| e.component == component) {
            Some(e) => {
                e.max_rel_err = e.max_rel_err.max(err);
                e.configs += 1;
            }
            None => self.entries.push(GradcheckEntry {
                component,
                max_rel_err: err,
                tolerance,
                configs: 1,
            }),
        }
    }
}

/// Central differences of `f` over every coordinate of every tensor.
pub fn fd_grads(tensors: &[Tensor], h: f64, mut f: impl FnMut(&[Tensor]) -> f64) -> Vec<Tensor> {
    let mut work = tensors.to_vec();
    let mut out = Vec::with_capacity(tensors.len());
    for k in 0..tensors.len() {
        let mut g = Tensor::zeros(tensors[k].shape());
        for j in 0..tensors[k].len() {
            let x = work[k].data()[j];
            work[k].data_mut()[j] = x + h;
            let up = f(&work);
            work[k].data_mut()[j] = x - h;
            let down = f(&work);
            work[k].data_mut()[j] = x;
            g.data_mut()[j] = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// Largest [`rel_err`] over matching entries.
pub fn max_rel_err(a: &[Tensor], b: &[Tensor]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| rel_err(*p, *q)))
        .fold(0.0, f64::max)
}

fn primitive_checks(report: &mut GradcheckReport, rng: &mut Rng) -> Result<()> {
    for p in PRIMITIVES {
        let xs = p.random_inputs(rng);
        let out_shape = p.apply(&mut crate::autodiff::Eval, &xs).shape().to_vec();
        let cot = rng.normal_tensor(&out_shape);

        let weighted = |g: &mut Tape, xs: &[Var]| {
            let y = p.apply(g, xs);
            let c = g.constant(cot.clone());
            let prod = g.mul(&y, &c);
            g.sum(&prod)
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x)).collect();
        let loss = weighted(&mut tape, &vars);
        let grads = tape.backward(loss)?.wrt_all(&vars);
        let fd = if p == Prim::StopGradient {
            xs.iter().map(|x| Tensor::zeros(x.shape())).collect()
        } else {
            fd_grads(&xs, FD_STEP, |w| {
                let y = p.apply(&mut crate::autodiff::Eval, w);
                y.dot(&cot)
            })
        };
        report.record(
            format!("primitive/{}", p.name()),
            max_rel_err(&grads, &fd),
            FD_TOLERANCE,
        );

        // cross-mode: gᵀ(Jv) against (Jᵀg)ᵀv
        let vs: Vec<Tensor> = xs.iter().map(|x| rng.normal_tensor(x.shape())).collect();
        let duals: Vec<DualTensor> = xs
            .iter()
            .zip(&vs)
            .map(|(x, v)| DualTensor::new(x.clone(), v.clone()))
            .collect::<Result<_>>()?;
        let out = p.apply(&mut Forward, &duals);
        let g_jv = cot.dot(&out.tangent);
        let jtg_v: f64 = grads.iter().zip(&vs).map(|(g, v)| g.dot(v)).sum();
        let gap = (g_jv - jtg_v).abs();
        let err = if gap < 1e-14 {
            0.0
        } else {
            gap / g_jv.abs().max(jtg_v.abs())
        };
        report.record(
            format!("cross_mode/{}", p.name()),
            err,
            CROSS_MODE_TOLERANCE,
        );
    }
    Ok(())
}

fn small_field(
    rng: &mut Rng,
    state_dim: usize,
    action_dim: usize,
    layer_norm: bool,
) -> Result<FieldSpec> {
    let embedding = if rng.uniform() < 0.5 {
        TimeEmbedding::Raw
    } else {
        TimeEmbedding::Sinusoidal { dims: 2 }
    };
    Ok(FieldSpec {
        action_dim,
        state_dim,
        width: 8,
        depth: 1 + rng.below(2),
        layer_norm,
        embedding,
    })
}

fn random_flow_batch(rng: &mut Rng, b: usize, m: usize, n: usize) -> FlowBatch {
    let a1 = rng.normal_tensor(&[b, m]);
    let s = rng.normal_tensor(&[b, n]);
    FlowBatch::sample(a1, s, TimeSampling::UniformPair, rng)
}

fn mlp_check(report: &mut GradcheckReport, rng: &mut Rng) -> Result<()> {
    let spec = NetSpec::new(3, 2, 6, 2, rng.uniform() < 0.5)?;
    let params = MlpParams::init(spec, rng)?;
    let x = rng.normal_tensor(&[5, 3]);
    let y = rng.normal_tensor(&[5, 2]);
    let loss_of = |net: &MlpParams| {
        let d = net.forward(&x).sub(&y);
        d.dot(&d) / 5.0
    };
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let out = params.apply(&mut tape, &bound, &xv);
    let yv = tape.constant(y.clone());
    let d = tape.sub(&out, &yv);
    let loss = tape.mean_row_sq_norm(&d);
    let grads = tape.backward(loss)?.wrt_all(&bound);
    let fd = fd_grads(params.tensors(), FD_STEP, |w| {
        loss_of(&MlpParams::from_tensors(spec, w.to_vec()).expect("same spec"))
    });
    report.record("mlp".into(), max_rel_err(&grads, &fd), FD_TOLERANCE);
    Ok(())
}

fn policy_loss_check(report: &mut GradcheckReport, rng: &mut Rng) -> Result<()> {
    let (m, n) = (1 + rng.below(2), rng.below(3));
    let spec = small_field(rng, n, m, false)?;
    let u = MeanFlowNet::init(spec, rng)?;
    let batch = random_flow_batch(rng, 6, m, n);
    let lambda = rng.uniform_range(0.0, 2.0);
    let (_, grads) = policy_loss_grad(&u, &batch, lambda)?;
    let target = mf_target(&u, &batch)?;
    let fd = fd_grads(u.net.tensors(), FD_STEP, |w| {
        let net = MlpParams::from_tensors(*u.net.spec(), w.to_vec()).expect("same spec");
        let v = MeanFlowNet { spec, net };
        let mf = crate::meanflow::mf_loss_against(&v, &batch, &target).expect("valid batch");
        mf + lambda * crate::meanflow::ivc_loss(&v, &batch).expect("valid batch")
    });
    report.record("policy_loss".into(), max_rel_err(&grads, &fd), FD_TOLERANCE);
    Ok(())
}

fn cfm_loss_check(report: &mut GradcheckReport, rng: &mut Rng) -> Result<()> {
    let (m, n) = (1 + rng.below(2), rng.below(3));
    let spec = small_field(rng, n, m, false)?;
    let v = FlowMatchNet::init(spec, rng)?;
    let batch = random_flow_batch(rng, 6, m, n);
    let (_, grads) = cfm_loss_grad(&v, &batch)?;
    let fd = fd_grads(v.net.tensors(), FD_STEP, |w| {
        let net = MlpParams::from_tensors(*v.net.spec(), w.to_vec()).expect("same spec");
        crate::meanflow::cfm_loss(&FlowMatchNet { spec, net }, &batch).expect("valid batch")
    });
    report.record("cfm_loss".into(), max_rel_err(&grads, &fd), FD_TOLERANCE);
    Ok(())
}

fn critic_loss_check(report: &mut GradcheckReport, rng: &mut Rng) -> Result<()> {
    let (m, n) = (1 + rng.below(2), 1 + rng.below(3));
    let online = CriticEnsemble::init(n, m, 6, 1 + rng.below(2), true, 2, rng)?;
    let target = CriticEnsemble::init(n, m, 6, online.spec().depth, true, 2, rng)?;
    let u = MeanFlowNet::init(small_field(rng, n, m, false)?, rng)?;
    let items: Vec<Transition> = (0..6)
        .map(|_| Transition {
            s: (0..n).map(|_| rng.standard_normal()).collect(),
            a: (0..m).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
            r: -1.0,
            s_next: (0..n).map(|_| rng.standard_normal()).collect(),
            done: rng.uniform() < 0.3,
        })
        .collect();
    let batch = TransitionBatch::from_transitions(&items.iter().collect::<Vec<_>>());
    let cfg = TdConfig {
        best_of_n: 4,
        ..TdConfig::default()
    };
    let y = td_targets(&online, &target, &OneStep(&u), &batch, &cfg, rng)?;
    let (_, grads) = critic_loss_against(&online, &batch, &y)?;
    let fd = fd_grads(&online.flat_tensors(), FD_STEP, |w| {
        let mut q = online.clone();
        q.set_flat_tensors(w);
        critic_loss_against(&q, &batch, &y).expect("valid batch").0
    });
    report.record(
        "critic_td_loss".into(),
        max_rel_err(&grads, &fd),
        FD_TOLERANCE,
    );
    Ok(())
}

fn jvp_check(report: &mut GradcheckReport, rng: &mut Rng) -> Result<()> {
    let (m, n, b) = (1 + rng.below(2), rng.below(3), 4);
    let u = MeanFlowNet::init(small_field(rng, n, m, false)?, rng)?;
    let a = rng.normal_tensor(&[b, m]);
    let v = rng.normal_tensor(&[b, m]);
    let t = rng.uniform_tensor(&[b, 1], 0.0, 0.5);
    let r = t.add(&rng.uniform_tensor(&[b, 1], 0.0, 0.5));
    let s = rng.normal_tensor(&[b, n]);
    let (_, d) = total_time_derivative(&u, &a, &t, &r, &s, &v)?;
    let h = FD_STEP;
    let shift = |k: f64| {
        let ah = a.add(&v.scale(k * h));
        let th = t.add(&Tensor::full(&[b, 1], k * h));
        u.eval(&ah, &th, &r, &s)
    };
    let fd = shift(1.0).sub(&shift(-1.0)).scale(1.0 / (2.0 * h));
    report.record(
        "jvp/total_derivative".into(),
        max_rel_err(std::slice::from_ref(&d), &[fd]),
        FD_TOLERANCE,
    );

    // cross-mode on the whole network: gᵀ(Jv) against (Jᵀg)ᵀv over (a, t, r)
    let cot = rng.normal_tensor(&[b, m]);
    let tan_r = rng.normal_tensor(&[b, 1]);
    let (_, jv) = jvp(
        |g: &mut Forward, x: &[DualTensor]| {
            let bound = u.bind(g);
            u.apply(g, &bound, &x[0], &x[1], &x[2], &x[3])
        },
        &[a.clone(), t.clone(), r.clone(), s.clone()],
        &[
            v.clone(),
            Tensor::full(&[b, 1], 1.0),
            tan_r.clone(),
            Tensor::zeros(s.shape()),
        ],
    )?;
    let mut tape = Tape::new();
    let bound = u.bind(&mut tape);
    let (av, tv, rv, sv) = (
        tape.param(&a),
        tape.param(&t),
        tape.param(&r),
        tape.constant(s.clone()),
    );
    let out = u.apply(&mut tape, &bound, &av, &tv, &rv, &sv);
    let c = tape.constant(cot.clone());
    let prod = tape.mul(&out, &c);
    let loss = tape.sum(&prod);
    let g = tape.backward(loss)?;
    let lhs = cot.dot(&jv);
    let rhs = g.wrt(av).dot(&v) + g.wrt(tv).sum() + g.wrt(rv).dot(&tan_r);
    let gap = (lhs - rhs).abs();
    report.record(
        "cross_mode/mean_velocity_net".into(),
        if gap < 1e-14 {
            0.0
        } else {
            gap / lhs.abs().max(rhs.abs())
        },
        CROSS_MODE_TOLERANCE,
    );
    Ok(())
}

/// Runs every check over `configs` random configurations.
pub fn run_gradcheck(configs: usize, seed: u64) -> Result<GradcheckReport> {
    let mut rng = Rng::new(seed);
    let mut report = GradcheckReport::default();
    for _ in 0..configs {
        primitive_checks(&mut report, &mut rng)?;
        mlp_check(&mut report, &mut rng)?;
        policy_loss_check(&mut report, &mut rng)?;
        cfm_loss_check(&mut report, &mut rng)?;
        critic_loss_check(&mut report, &mut rng)?;
        jvp_check(&mut report, &mut rng)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::kernels::set_gelu_derivative_fault;

    #[test]
    fn clean_build_passes() {
        let report = run_gradcheck(3, 0).unwrap();
        assert!(report.pass(), "{report:#?}");
        for name in [
            "primitive/gelu",
            "policy_loss",
            "cfm_loss",
            "critic_td_loss",
            "jvp/total_derivative",
            "mlp",
        ] {
            assert!(report.entry(name).is_some(), "{name} missing");
        }
    }

    #[test]
    fn broken_gelu_derivative_is_caught() {
        set_gelu_derivative_fault(1.01);
        let report = run_gradcheck(1, 0);
        set_gelu_derivative_fault(1.0);
        let report = report.unwrap();
        assert!(!report.pass());
        assert!(!report.entry("primitive/gelu").unwrap().pass());
    }
}
