use super::{kernels, Graph};
use crate::error::{contract, Result};
use crate::Tensor;

/// A value paired with its directional derivative (same shape).
#[derive(Clone, Debug, PartialEq)]
pub struct DualTensor {
    pub primal: Tensor,
    pub tangent: Tensor,
}

impl DualTensor {
    pub fn new(primal: Tensor, tangent: Tensor) -> Result<Self> {
        if primal.shape() != tangent.shape() {
            return Err(contract(format!(
                "tangent shape {:?} does not match primal {:?}",
                tangent.shape(),
                primal.shape()
            )));
        }
        Ok(Self { primal, tangent })
    }

    pub fn constant(primal: Tensor) -> Self {
        let tangent = Tensor::zeros(primal.shape());
        Self { primal, tangent }
    }
}

/// Forward-mode evaluator: every op applies its exact Jacobian to the tangent.
#[derive(Debug, Default, Clone, Copy)]
pub struct Forward;

impl Graph for Forward {
    type Value = DualTensor;

    fn constant(&mut self, t: Tensor) -> DualTensor {
        DualTensor::constant(t)
    }

    fn param(&mut self, t: &Tensor) -> DualTensor {
        DualTensor::constant(t.clone())
    }

    fn value<'a>(&'a self, v: &'a DualTensor) -> &'a Tensor {
        &v.primal
    }

    fn matmul(&mut self, a: &DualTensor, b: &DualTensor) -> DualTensor {
        let primal = a.primal.matmul(&b.primal);
        // parameters enter with zero tangent; skip their product
        let mut tangent = if a.tangent.is_zero() {
            Tensor::zeros(primal.shape())
        } else {
            a.tangent.matmul(&b.primal)
        };
        if !b.tangent.is_zero() {
            tangent.add_assign(&a.primal.matmul(&b.tangent));
        }
        DualTensor { primal, tangent }
    }

    fn add(&mut self, a: &DualTensor, b: &DualTensor) -> DualTensor {
        DualTensor {
            primal: a.primal.add(&b.primal),
            tangent: a.tangent.add(&b.tangent),
        }
    }

    fn sub(&mut self, a: &DualTensor, b: &DualTensor) -> DualTensor {
        DualTensor {
            primal: a.primal.sub(&b.primal),
            tangent: a.tangent.sub(&b.tangent),
        }
    }

    fn mul(&mut self, a: &DualTensor, b: &DualTensor) -> DualTensor {
        let tangent = a.tangent.mul(&b.primal).add(&a.primal.mul(&b.tangent));
        DualTensor {
            primal: a.primal.mul(&b.primal),
            tangent,
        }
    }

    fn div(&mut self, a: &DualTensor, b: &DualTensor) -> DualTensor {
        let primal = a.primal.div(&b.primal);
        // d(a/b) = (da − q·db)/b
        let tangent = a.tangent.sub(&primal.mul(&b.tangent)).div(&b.primal);
        DualTensor { primal, tangent }
    }

    fn add_row(&mut self, x: &DualTensor, bias: &DualTensor) -> DualTensor {
        DualTensor {
            primal: x.primal.add_row(&bias.primal),
            tangent: x.tangent.add_row(&bias.tangent),
        }
    }

    fn mul_col(&mut self, x: &DualTensor, col: &DualTensor) -> DualTensor {
        let tangent = x
            .tangent
            .mul_col(&col.primal)
            .add(&x.primal.mul_col(&col.tangent));
        DualTensor {
            primal: x.primal.mul_col(&col.primal),
            tangent,
        }
    }

    fn scale(&mut self, x: &DualTensor, k: f64) -> DualTensor {
        DualTensor {
            primal: x.primal.scale(k),
            tangent: x.tangent.scale(k),
        }
    }

    fn gelu(&mut self, x: &DualTensor) -> DualTensor {
        let (primal, grad) = kernels::gelu_with_grad_tensor(&x.primal);
        DualTensor {
            primal,
            tangent: x.tangent.mul(&grad),
        }
    }

    fn layer_norm(&mut self, x: &DualTensor) -> DualTensor {
        let (primal, inv_std) = kernels::layer_norm(&x.primal);
        let tangent = kernels::layer_norm_linear(&primal, &inv_std, &x.tangent);
        DualTensor { primal, tangent }
    }

    fn sin(&mut self, x: &DualTensor) -> DualTensor {
        let tangent = x.tangent.mul(&x.primal.map(f64::cos));
        DualTensor {
            primal: x.primal.map(f64::sin),
            tangent,
        }
    }

    fn cos(&mut self, x: &DualTensor) -> DualTensor {
        let tangent = x.tangent.mul(&x.primal.map(|v| -v.sin()));
        DualTensor {
            primal: x.primal.map(f64::cos),
            tangent,
        }
    }

    fn concat_cols(&mut self, parts: &[&DualTensor]) -> DualTensor {
        let p: Vec<&Tensor> = parts.iter().map(|d| &d.primal).collect();
        let t: Vec<&Tensor> = parts.iter().map(|d| &d.tangent).collect();
        DualTensor {
            primal: Tensor::concat_cols(&p),
            tangent: Tensor::concat_cols(&t),
        }
    }

    fn sum(&mut self, x: &DualTensor) -> DualTensor {
        DualTensor {
            primal: Tensor::scalar(x.primal.sum()),
            tangent: Tensor::scalar(x.tangent.sum()),
        }
    }

    fn stop_gradient(&mut self, x: &DualTensor) -> DualTensor {
        DualTensor::constant(x.primal.clone())
    }
}

/// Value and directional derivative of `f` at `inputs` along `tangents`.
///
/// Whatever parameters `f` closes over are constants here; the result is
/// plain data and cannot be differentiated further.
pub fn jvp<F>(f: F, inputs: &[Tensor], tangents: &[Tensor]) -> Result<(Tensor, Tensor)>
where
    F: FnOnce(&mut Forward, &[DualTensor]) -> DualTensor,
{
    if inputs.len() != tangents.len() {
        return Err(contract(format!(
            "{} inputs but {} tangents",
            inputs.len(),
            tangents.len()
        )));
    }
    let duals = inputs
        .iter()
        .zip(tangents)
        .map(|(x, dx)| DualTensor::new(x.clone(), dx.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut Forward, &duals);
    Ok((out.primal, out.tangent))
}
