//! Elementwise kernels shared by every evaluation mode.

use std::cell::Cell;

use crate::Tensor;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Row normalization floor. Small enough that normalized rows have unit
/// variance to ~1e-8 whenever the raw row variance exceeds 1e-2.
pub const LAYER_NORM_EPS: f64 = 1e-10;

thread_local! {
    static GELU_GRAD_SCALE: Cell<f64> = const { Cell::new(1.0) };
}

/// Test fixture: multiplies the registered GELU derivative by `scale` on
/// the current thread. Exists so gradient checking can be shown to catch a
/// broken derivative.
#[doc(hidden)]
pub fn set_gelu_derivative_fault(scale: f64) {
    GELU_GRAD_SCALE.with(|c| c.set(scale));
}

/// `tanh` through one `exp`, several times cheaper than the libm routine.
/// Absolute error stays at rounding level, which is all GELU needs. Beyond
/// |y| = 20 the result is ±1 in f64.
#[inline]
fn tanh(y: f64) -> f64 {
    let e = (2.0 * y.clamp(-20.0, 20.0)).exp();
    (e - 1.0) / (e + 1.0)
}

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + tanh(SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)))
}

/// GELU value and exact derivative sharing one `tanh`.
#[inline]
fn gelu_pair(x: f64) -> (f64, f64) {
    let x2 = x * x;
    let th = tanh(SQRT_2_OVER_PI * (x + GELU_CUBIC * x2 * x));
    let value = 0.5 * x * (1.0 + th);
    let grad = 0.5 * (1.0 + th)
        + 0.5 * x * (1.0 - th * th) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x2);
    (value, grad)
}

fn fault_scale() -> f64 {
    GELU_GRAD_SCALE.with(Cell::get)
}

pub fn gelu_grad(x: f64) -> f64 {
    gelu_pair(x).1 * fault_scale()
}

pub fn gelu_tensor(x: &Tensor) -> Tensor {
    x.map(gelu)
}

pub fn gelu_grad_tensor(x: &Tensor) -> Tensor {
    let scale = fault_scale();
    x.map(|v| gelu_pair(v).1 * scale)
}

/// Values and derivatives in one pass.
pub fn gelu_with_grad_tensor(x: &Tensor) -> (Tensor, Tensor) {
    let scale = fault_scale();
    let mut value = Vec::with_capacity(x.len());
    let mut grad = Vec::with_capacity(x.len());
    for &v in x.data() {
        let (f, d) = gelu_pair(v);
        value.push(f);
        grad.push(d * scale);
    }
    (
        Tensor::new(x.shape().to_vec(), value),
        Tensor::new(x.shape().to_vec(), grad),
    )
}

/// Per-row standardization without affine parameters. Returns the
/// normalized rows and each row's inverse standard deviation.
pub fn layer_norm(x: &Tensor) -> (Tensor, Vec<f64>) {
    let n = x.cols();
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(x.rows());
    for row in out.data_mut().chunks_mut(n.max(1)) {
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * s;
        }
        inv_std.push(s);
    }
    (out, inv_std)
}

/// Shared linear map of layer-norm's Jacobian, `s·(d − mean(d) − y·mean(y·d))`.
/// It is symmetric, so it serves as both the JVP and the VJP.
pub fn layer_norm_linear(y: &Tensor, inv_std: &[f64], d: &Tensor) -> Tensor {
    let n = y.cols();
    let mut out = d.clone();
    for (i, row) in out.data_mut().chunks_mut(n.max(1)).enumerate() {
        let yr = y.row(i);
        let mean_d = row.iter().sum::<f64>() / n as f64;
        let mean_yd = row.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        let s = inv_std[i];
        for (v, yy) in row.iter_mut().zip(yr) {
            *v = s * (*v - mean_d - yy * mean_yd);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(10.0) - 10.0).abs() < 1e-4);
        // independent evaluation of the tanh formula
        let c = (2.0 / std::f64::consts::PI).sqrt();
        let at_one = 0.5 * (1.0 + (c * 1.044715f64).tanh());
        assert!((gelu(1.0) - at_one).abs() < 1e-15);
        assert!((gelu(1.0) - 0.841_191_990_608_276_8).abs() < 1e-15);
    }

    #[test]
    fn tanh_matches_libm() {
        let mut x = -40.0;
        while x < 40.0 {
            assert!((tanh(x) - x.tanh()).abs() < 1e-15, "tanh({x})");
            x += 0.0137;
        }
        assert_eq!(tanh(0.0), 0.0);
        assert_eq!(tanh(1e3), 1.0);
        assert_eq!(tanh(-1e3), -1.0);
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - fd).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = Tensor::matrix(2, 4, vec![1.0, 2.0, 3.0, 10.0, -4.0, 0.5, 0.25, 7.0]);
        let (y, _) = layer_norm(&x);
        for i in 0..2 {
            let r = y.row(i);
            let m = r.iter().sum::<f64>() / 4.0;
            let v = r.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-6);
        }
    }
}
