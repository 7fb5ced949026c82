use super::field::{InstantVelocity, MeanVelocity};
use super::{interpolate, FlowBatch};
use crate::autodiff::{jvp, Eval, Graph, Tape};
use crate::error::{Error, Result};
use crate::Tensor;

/// Scalar values of the policy objective and its two terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub mf: f64,
    pub ivc: f64,
}

/// `u(a, t, r, s)` and its total derivative in `t` along the flow, i.e. the
/// directional derivative with tangent `(v, 1, 0)` over `(a, t, r)`; `r`
/// does not move with `t`.
pub fn total_time_derivative<U: MeanVelocity>(
    u: &U,
    a: &Tensor,
    t: &Tensor,
    r: &Tensor,
    s: &Tensor,
    v: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let b = a.rows();
    jvp(
        |g, x| {
            let bound = u.bind(g);
            u.apply(g, &bound, &x[0], &x[1], &x[2], &x[3])
        },
        &[a.clone(), t.clone(), r.clone(), s.clone()],
        &[
            v.clone(),
            Tensor::full(&[b, 1], 1.0),
            Tensor::zeros(&[b, 1]),
            Tensor::zeros(s.shape()),
        ],
    )
}

/// The regression target `v − (t − r)·du/dt`, as plain data. It is built
/// outside any tape, so no gradient can reach it.
pub fn mf_target<U: MeanVelocity>(u: &U, batch: &FlowBatch) -> Result<Tensor> {
    let (at, v) = interpolate(&batch.a0, &batch.a1, &batch.t)?;
    let (_, dudt) = total_time_derivative(u, &at, &batch.t, &batch.r, &batch.s, &v)?;
    let gap = batch.t.sub(&batch.r);
    Ok(v.sub(&dudt.mul_col(&gap)))
}

fn mf_term<U: MeanVelocity, G: Graph>(
    g: &mut G,
    u: &U,
    bound: &[G::Value],
    batch: &FlowBatch,
    target: &Tensor,
) -> Result<G::Value> {
    let (at, _) = interpolate(&batch.a0, &batch.a1, &batch.t)?;
    let (a, t, r, s) = (
        g.constant(at),
        g.constant(batch.t.clone()),
        g.constant(batch.r.clone()),
        g.constant(batch.s.clone()),
    );
    let pred = u.apply(g, bound, &a, &t, &r, &s);
    let target = g.constant(target.clone());
    let diff = g.sub(&pred, &target);
    Ok(g.mean_row_sq_norm(&diff))
}

fn ivc_term<U: MeanVelocity, G: Graph>(
    g: &mut G,
    u: &U,
    bound: &[G::Value],
    batch: &FlowBatch,
) -> Result<G::Value> {
    let (at, v) = interpolate(&batch.a0, &batch.a1, &batch.t_ivc)?;
    let (a, t, s) = (
        g.constant(at),
        g.constant(batch.t_ivc.clone()),
        g.constant(batch.s.clone()),
    );
    let pred = u.apply(g, bound, &a, &t, &t, &s);
    let v = g.constant(v);
    let diff = g.sub(&pred, &v);
    Ok(g.mean_row_sq_norm(&diff))
}

/// Mean squared residual of the mean-flow identity.
pub fn mf_loss<U: MeanVelocity>(u: &U, batch: &FlowBatch) -> Result<f64> {
    let target = mf_target(u, batch)?;
    mf_loss_against(u, batch, &target)
}

/// Mean-flow loss against a target fixed in advance.
pub fn mf_loss_against<U: MeanVelocity>(u: &U, batch: &FlowBatch, target: &Tensor) -> Result<f64> {
    let mut g = Eval;
    let bound = u.bind(&mut g);
    Ok(mf_term(&mut g, u, &bound, batch, target)?.item())
}

/// Boundary loss `mean‖u(a(t), t, t) − v‖²` at the independent times `t_ivc`.
pub fn ivc_loss<U: MeanVelocity>(u: &U, batch: &FlowBatch) -> Result<f64> {
    let mut g = Eval;
    let bound = u.bind(&mut g);
    Ok(ivc_term(&mut g, u, &bound, batch)?.item())
}

pub fn policy_loss<U: MeanVelocity>(u: &U, batch: &FlowBatch, lambda: f64) -> Result<LossParts> {
    let mf = mf_loss(u, batch)?;
    let ivc = ivc_loss(u, batch)?;
    Ok(LossParts {
        total: mf + lambda * ivc,
        mf,
        ivc,
    })
}

/// `mf + λ·ivc` and its gradient with respect to every tensor `u` binds.
pub fn policy_loss_grad<U: MeanVelocity>(
    u: &U,
    batch: &FlowBatch,
    lambda: f64,
) -> Result<(LossParts, Vec<Tensor>)> {
    let target = mf_target(u, batch)?;
    let mut tape = Tape::new();
    let bound = u.bind(&mut tape);
    let mf = mf_term(&mut tape, u, &bound, batch, &target)?;
    let ivc = ivc_term(&mut tape, u, &bound, batch)?;
    let weighted = tape.scale(&ivc, lambda);
    let total = tape.add(&mf, &weighted);
    let parts = LossParts {
        total: tape.value(&total).item(),
        mf: tape.value(&mf).item(),
        ivc: tape.value(&ivc).item(),
    };
    if !parts.total.is_finite() {
        return Err(Error::NonFinite {
            what: format!("policy loss {parts:?}"),
            step: 0,
        });
    }
    Ok((parts, tape.backward(total)?.wrt_all(&bound)))
}

fn cfm_term<V: InstantVelocity, G: Graph>(
    g: &mut G,
    v: &V,
    bound: &[G::Value],
    batch: &FlowBatch,
) -> Result<G::Value> {
    let (at, vel) = interpolate(&batch.a0, &batch.a1, &batch.t)?;
    let (a, t, s) = (
        g.constant(at),
        g.constant(batch.t.clone()),
        g.constant(batch.s.clone()),
    );
    let pred = v.apply(g, bound, &a, &t, &s);
    let vel = g.constant(vel);
    let diff = g.sub(&pred, &vel);
    Ok(g.mean_row_sq_norm(&diff))
}

/// Conditional flow-matching loss `mean‖v(a(t), t, s) − (a1 − a0)‖²`; the
/// `r` column is ignored.
pub fn cfm_loss<V: InstantVelocity>(v: &V, batch: &FlowBatch) -> Result<f64> {
    let mut g = Eval;
    let bound = v.bind(&mut g);
    Ok(cfm_term(&mut g, v, &bound, batch)?.item())
}

pub fn cfm_loss_grad<V: InstantVelocity>(v: &V, batch: &FlowBatch) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let bound = v.bind(&mut tape);
    let loss = cfm_term(&mut tape, v, &bound, batch)?;
    let value = tape.value(&loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite {
            what: format!("flow-matching loss {value}"),
            step: 0,
        });
    }
    Ok((value, tape.backward(loss)?.wrt_all(&bound)))
}
