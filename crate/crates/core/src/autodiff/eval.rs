use super::{kernels, Graph};
use crate::Tensor;

/// Plain evaluation with no derivative bookkeeping.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eval;

impl Graph for Eval {
    type Value = Tensor;

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn param(&mut self, t: &Tensor) -> Tensor {
        t.clone()
    }

    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }

    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        a.matmul(b)
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        a.add(b)
    }

    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        a.sub(b)
    }

    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        a.mul(b)
    }

    fn div(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        a.div(b)
    }

    fn add_row(&mut self, x: &Tensor, bias: &Tensor) -> Tensor {
        x.add_row(bias)
    }

    fn mul_col(&mut self, x: &Tensor, col: &Tensor) -> Tensor {
        x.mul_col(col)
    }

    fn scale(&mut self, x: &Tensor, k: f64) -> Tensor {
        x.scale(k)
    }

    fn gelu(&mut self, x: &Tensor) -> Tensor {
        kernels::gelu_tensor(x)
    }

    fn layer_norm(&mut self, x: &Tensor) -> Tensor {
        kernels::layer_norm(x).0
    }

    fn sin(&mut self, x: &Tensor) -> Tensor {
        x.map(f64::sin)
    }

    fn cos(&mut self, x: &Tensor) -> Tensor {
        x.map(f64::cos)
    }

    fn concat_cols(&mut self, parts: &[&Tensor]) -> Tensor {
        Tensor::concat_cols(parts)
    }

    fn sum(&mut self, x: &Tensor) -> Tensor {
        Tensor::scalar(x.sum())
    }

    fn stop_gradient(&mut self, x: &Tensor) -> Tensor {
        x.clone()
    }
}
