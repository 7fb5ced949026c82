use super::{kernels, Graph};
use crate::error::{contract, Result};
use crate::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    Gelu { x: usize, grad: Tensor },
    LayerNorm { x: usize, inv_std: Vec<f64> },
    Sin(usize),
    Cos(usize),
    Concat(Vec<usize>),
    Sum(usize),
    StopGradient,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode recorder. Nodes are appended in evaluation order, which is
/// a topological order, so the backward sweep simply walks ids downward.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<usize>,
}

/// Result of a backward sweep, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to the leaf `v`; zeros if nothing flowed.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn wrt_all(&self, vars: &[Var]) -> Vec<Tensor> {
        vars.iter().map(|&v| self.wrt(v)).collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Parameter leaves in registration order.
    pub fn params(&self) -> Vec<Var> {
        self.params.iter().map(|&i| Var(i)).collect()
    }

    /// Whether any parameter leaf can reach `v` through differentiable ops.
    pub fn depends_on_params(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let requires_grad = !matches!(op, Op::StopGradient | Op::Leaf)
            && inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: &Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Exact gradient of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(contract(format!(
                "backward needs a scalar output, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let send = |to: usize, contribution: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !self.nodes[to].requires_grad {
                    return;
                }
                match &mut grads[to] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            };
            let v = |i: usize| &self.nodes[i].value;
            match &node.op {
                Op::Leaf | Op::StopGradient => {}
                Op::Matmul(a, b) => {
                    send(*a, g.matmul_t(v(*b)), &mut grads);
                    send(*b, v(*a).t_matmul(&g), &mut grads);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone(), &mut grads);
                    send(*b, g.clone(), &mut grads);
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone(), &mut grads);
                    send(*b, g.scale(-1.0), &mut grads);
                }
                Op::Mul(a, b) => {
                    send(*a, g.mul(v(*b)), &mut grads);
                    send(*b, g.mul(v(*a)), &mut grads);
                }
                Op::Div(a, b) => {
                    send(*a, g.div(v(*b)), &mut grads);
                    let gb = g
                        .zip_map(&node.value, "div", |gi, q| gi * q)
                        .div(v(*b))
                        .scale(-1.0);
                    send(*b, gb, &mut grads);
                }
                Op::AddRow(x, bias) => {
                    send(
                        *bias,
                        g.sum_rows().reshape(v(*bias).shape().to_vec()),
                        &mut grads,
                    );
                    send(*x, g, &mut grads);
                }
                Op::MulCol(x, c) => {
                    send(*c, g.mul(v(*x)).sum_cols(), &mut grads);
                    send(*x, g.mul_col(v(*c)), &mut grads);
                }
                Op::Scale(x, k) => send(*x, g.scale(*k), &mut grads),
                Op::Gelu { x, grad } => send(*x, g.mul(grad), &mut grads),
                Op::LayerNorm { x, inv_std } => send(
                    *x,
                    kernels::layer_norm_linear(&node.value, inv_std, &g),
                    &mut grads,
                ),
                Op::Sin(x) => send(*x, g.mul(&v(*x).map(f64::cos)), &mut grads),
                Op::Cos(x) => send(*x, g.mul(&v(*x).map(|a| -a.sin())), &mut grads),
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = v(p).cols();
                        send(p, g.slice_cols(start, w), &mut grads);
                        start += w;
                    }
                }
                Op::Sum(x) => send(*x, Tensor::full(v(*x).shape(), g.item()), &mut grads),
            }
        }
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }
}

impl Graph for Tape {
    type Value = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, &[])
    }

    fn param(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            value: t.clone(),
            op: Op::Leaf,
            requires_grad: true,
        });
        let id = self.nodes.len() - 1;
        self.params.push(id);
        Var(id)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        self.val(v)
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Var {
        let out = self.val(a).matmul(self.val(b));
        self.push(out, Op::Matmul(a.0, b.0), &[a.0, b.0])
    }

    fn add(&mut self, a: &Var, b: &Var) -> Var {
        let out = self.val(a).add(self.val(b));
        self.push(out, Op::Add(a.0, b.0), &[a.0, b.0])
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Var {
        let out = self.val(a).sub(self.val(b));
        self.push(out, Op::Sub(a.0, b.0), &[a.0, b.0])
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        let out = self.val(a).mul(self.val(b));
        self.push(out, Op::Mul(a.0, b.0), &[a.0, b.0])
    }

    fn div(&mut self, a: &Var, b: &Var) -> Var {
        let out = self.val(a).div(self.val(b));
        self.push(out, Op::Div(a.0, b.0), &[a.0, b.0])
    }

    fn add_row(&mut self, x: &Var, bias: &Var) -> Var {
        let out = self.val(x).add_row(self.val(bias));
        self.push(out, Op::AddRow(x.0, bias.0), &[x.0, bias.0])
    }

    fn mul_col(&mut self, x: &Var, col: &Var) -> Var {
        let out = self.val(x).mul_col(self.val(col));
        self.push(out, Op::MulCol(x.0, col.0), &[x.0, col.0])
    }

    fn scale(&mut self, x: &Var, k: f64) -> Var {
        let out = self.val(x).scale(k);
        self.push(out, Op::Scale(x.0, k), &[x.0])
    }

    fn gelu(&mut self, x: &Var) -> Var {
        if !self.nodes[x.0].requires_grad {
            let out = kernels::gelu_tensor(self.val(x));
            return self.push(
                out,
                Op::Gelu {
                    x: x.0,
                    grad: Tensor::zeros(&[0]),
                },
                &[x.0],
            );
        }
        let (out, grad) = kernels::gelu_with_grad_tensor(self.val(x));
        self.push(out, Op::Gelu { x: x.0, grad }, &[x.0])
    }

    fn layer_norm(&mut self, x: &Var) -> Var {
        let (out, inv_std) = kernels::layer_norm(self.val(x));
        self.push(out, Op::LayerNorm { x: x.0, inv_std }, &[x.0])
    }

    fn sin(&mut self, x: &Var) -> Var {
        let out = self.val(x).map(f64::sin);
        self.push(out, Op::Sin(x.0), &[x.0])
    }

    fn cos(&mut self, x: &Var) -> Var {
        let out = self.val(x).map(f64::cos);
        self.push(out, Op::Cos(x.0), &[x.0])
    }

    fn concat_cols(&mut self, parts: &[&Var]) -> Var {
        let vals: Vec<&Tensor> = parts.iter().map(|p| self.val(p)).collect();
        let out = Tensor::concat_cols(&vals);
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(out, Op::Concat(ids.clone()), &ids)
    }

    fn sum(&mut self, x: &Var) -> Var {
        let out = Tensor::scalar(self.val(x).sum());
        self.push(out, Op::Sum(x.0), &[x.0])
    }

    fn stop_gradient(&mut self, x: &Var) -> Var {
        let out = self.val(x).clone();
        self.push(out, Op::StopGradient, &[x.0])
    }
}
