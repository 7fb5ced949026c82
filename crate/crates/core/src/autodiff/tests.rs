use super::*;
use crate::gradcheck::{Prim, PRIMITIVES as ALL};
use crate::Rng;

fn apply<G: Graph>(g: &mut G, p: Prim, xs: &[G::Value]) -> G::Value {
    p.apply(g, xs)
}

fn random_inputs(p: Prim, rng: &mut Rng) -> Vec<Tensor> {
    p.random_inputs(rng)
}

#[test]
fn forward_and_reverse_modes_agree_on_every_primitive() {
    let mut rng = Rng::new(11);
    for p in ALL {
        for _ in 0..20 {
            let xs = random_inputs(p, &mut rng);
            let vs: Vec<Tensor> = xs.iter().map(|x| rng.normal_tensor(x.shape())).collect();

            let duals: Vec<DualTensor> = xs
                .iter()
                .zip(&vs)
                .map(|(x, v)| DualTensor::new(x.clone(), v.clone()).unwrap())
                .collect();
            let out = apply(&mut Forward, p, &duals);
            let cot = rng.normal_tensor(out.primal.shape());
            let g_jv = cot.dot(&out.tangent);

            let mut tape = Tape::new();
            let vars: Vec<Var> = xs.iter().map(|x| tape.param(x)).collect();
            let y = apply(&mut tape, p, &vars);
            let c = tape.constant(cot.clone());
            let prod = tape.mul(&y, &c);
            let loss = tape.sum(&prod);
            let grads = tape.backward(loss).unwrap();
            let jtg_v: f64 = vars
                .iter()
                .zip(&vs)
                .map(|(&var, v)| grads.wrt(var).dot(v))
                .sum();

            let denom = g_jv.abs().max(jtg_v.abs()).max(1e-300);
            let rel = (g_jv - jtg_v).abs() / denom;
            assert!(
                rel < 1e-10 || (g_jv - jtg_v).abs() < 1e-14,
                "{p:?}: {g_jv} vs {jtg_v}"
            );
        }
    }
}

#[test]
fn eval_mode_matches_tape_values() {
    let mut rng = Rng::new(5);
    for p in ALL {
        let xs = random_inputs(p, &mut rng);
        let plain = apply(&mut Eval, p, &xs);
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x)).collect();
        let y = apply(&mut tape, p, &vars);
        assert_eq!(&plain, tape.value(&y), "{p:?}");
    }
}

#[test]
fn quadratic_gradient() {
    let mut tape = Tape::new();
    let theta = tape.param(&Tensor::new(vec![2], vec![1.0, -2.0]));
    let sq = tape.mul(&theta, &theta);
    let f = tape.sum(&sq);
    let g = tape.backward(f).unwrap().wrt(theta);
    assert_eq!(g.data(), &[2.0, -4.0]);
}

#[test]
fn stop_gradient_branch_contributes_nothing() {
    let mut tape = Tape::new();
    let theta = tape.param(&Tensor::new(vec![1], vec![3.0]));
    let frozen = tape.stop_gradient(&theta);
    let prod = tape.mul(&frozen, &theta);
    let f = tape.sum(&prod);
    assert!(!tape.depends_on_params(frozen));
    let g = tape.backward(f).unwrap().wrt(theta);
    assert_eq!(g.data(), &[3.0]);
}

#[test]
fn stop_gradient_product_rule_is_exact() {
    // f = sg(g(θ)) · h(θ), g = Σ gelu(θ), h = Σ sin(θ)  ⇒  ∇f = g(θ)·∇h
    let theta = Tensor::matrix(1, 3, vec![0.3, -1.2, 2.0]);
    let mut tape = Tape::new();
    let th = tape.param(&theta);
    let ge = tape.gelu(&th);
    let gs = tape.sum(&ge);
    let g_frozen = tape.stop_gradient(&gs);
    let hs_el = tape.sin(&th);
    let hs = tape.sum(&hs_el);
    let f = tape.mul(&g_frozen, &hs);
    let grad = tape.backward(f).unwrap().wrt(th);
    let gval = tape.value(&gs).item();
    let expected = theta.map(f64::cos).scale(gval);
    assert_eq!(grad, expected);
}

#[test]
fn backward_rejects_non_scalar_output() {
    let mut tape = Tape::new();
    let x = tape.param(&Tensor::zeros(&[2, 2]));
    let y = tape.gelu(&x);
    let err = tape.backward(y).unwrap_err();
    assert!(err.to_string().contains("scalar"), "{err}");
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let w = tape.param(&Tensor::matrix(2, 1, vec![1.0, 2.0]));
    let x = tape.constant(Tensor::matrix(1, 2, vec![3.0, 4.0]));
    let y = tape.matmul(&x, &w);
    let f = tape.sum(&y);
    let grads = tape.backward(f).unwrap();
    assert!(grads.wrt(x).is_zero());
    assert_eq!(grads.wrt(w).data(), &[3.0, 4.0]);
}

/// Random composition: two-layer net with layer norm, time features and a
/// divisor, reduced to a scalar.
fn composite<G: Graph>(g: &mut G, params: &[G::Value], x: &G::Value) -> G::Value {
    let h = g.matmul(x, &params[0]);
    let h = g.add_row(&h, &params[1]);
    let h = g.layer_norm(&h);
    let h = g.gelu(&h);
    let s = g.sin(&h);
    let c = g.cos(&h);
    let hc = g.concat_cols(&[&s, &c]);
    let o = g.matmul(&hc, &params[2]);
    let o2 = g.mul(&o, &o);
    let denom = g.scale(&o2, 0.5);
    let one = g.constant(Tensor::full(g.value(&o).shape(), 1.0));
    let denom = g.add(&denom, &one);
    let q = g.div(&o, &denom);
    let col = g.matmul(x, &params[3]);
    let q = g.mul_col(&q, &col);
    g.sum(&q)
}

fn eval_composite(params: &[Tensor], x: &Tensor) -> f64 {
    let mut e = Eval;
    let ps: Vec<Tensor> = params.to_vec();
    composite(&mut e, &ps, x).item()
}

#[test]
fn reverse_gradient_matches_central_differences_at_random_points() {
    let mut rng = Rng::new(99);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let params = vec![
            rng.normal_tensor(&[3, 5]).scale(0.7),
            rng.normal_tensor(&[5]).scale(0.1),
            rng.normal_tensor(&[10, 2]).scale(0.5),
            rng.normal_tensor(&[3, 1]),
        ];
        let x = rng.normal_tensor(&[4, 3]);
        let mut tape = Tape::new();
        let pv: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
        let xv = tape.constant(x.clone());
        let f = composite(&mut tape, &pv, &xv);
        let grads = tape.backward(f).unwrap();
        for (k, p) in params.iter().enumerate() {
            let g = grads.wrt(pv[k]);
            for i in 0..p.len() {
                let mut plus = params.clone();
                plus[k].data_mut()[i] += h;
                let mut minus = params.clone();
                minus[k].data_mut()[i] -= h;
                let fd = (eval_composite(&plus, &x) - eval_composite(&minus, &x)) / (2.0 * h);
                let a = g.data()[i];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-4);
                worst = worst.max(rel);
            }
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn jvp_of_identity_returns_tangent() {
    let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
    let v = Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.0]);
    let t = Tensor::column(vec![0.2, 0.4]);
    let r = Tensor::column(vec![0.6, 0.9]);
    let (val, d) = jvp(
        |_, xs| xs[0].clone(),
        &[a.clone(), t.clone(), r.clone()],
        &[
            v.clone(),
            Tensor::full(&[2, 1], 1.0),
            Tensor::zeros(&[2, 1]),
        ],
    )
    .unwrap();
    assert_eq!(val, a);
    assert_eq!(d, v);
}

#[test]
fn jvp_product_rule() {
    // f(a,t,r) = t·a with tangent (v,1,0) ⇒ t·v + a
    let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
    let v = Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.0]);
    let t = Tensor::column(vec![0.25, 0.5]);
    let (_, d) = jvp(
        |g, xs| g.mul_col(&xs[0], &xs[1]),
        &[a.clone(), t.clone(), Tensor::zeros(&[2, 1])],
        &[
            v.clone(),
            Tensor::full(&[2, 1], 1.0),
            Tensor::zeros(&[2, 1]),
        ],
    )
    .unwrap();
    let expected = v.mul_col(&t).add(&a);
    assert_eq!(d, expected);
}

#[test]
fn jvp_rejects_mismatched_tangent() {
    let err = jvp(
        |_, xs| xs[0].clone(),
        &[Tensor::zeros(&[2, 2])],
        &[Tensor::zeros(&[2, 1])],
    )
    .unwrap_err();
    assert!(err.to_string().contains("contract violation"));
}

#[test]
fn jvp_of_linear_map_is_exact() {
    let mut rng = Rng::new(3);
    let w = rng.normal_tensor(&[3, 2]);
    let x = rng.normal_tensor(&[4, 3]);
    let v = rng.normal_tensor(&[4, 3]);
    let (_, d) = jvp(
        |g, xs| {
            let wv = g.param(&w);
            g.matmul(&xs[0], &wv)
        },
        &[x],
        std::slice::from_ref(&v),
    )
    .unwrap();
    assert_eq!(d, v.matmul(&w));
}
