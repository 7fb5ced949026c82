use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one parameter list.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor], config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update in place. A non-finite gradient aborts before anything
    /// is modified.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(contract(format!(
                "adam: {} params, {} grads, state for {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(contract(format!(
                    "adam: tensor {i} shape {:?} vs grad {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient of parameter tensor {i}"),
                step: self.step as usize,
            });
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for j in 0..pd.len() {
                md[j] = beta1 * md[j] + (1.0 - beta1) * gd[j];
                vd[j] = beta2 * vd[j] + (1.0 - beta2) * gd[j] * gd[j];
                let m_hat = md[j] / bc1;
                let v_hat = vd[j] / bc2;
                pd[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5])];
        let before = p.clone();
        let mut s = AdamState::new(&p, AdamConfig::default());
        for _ in 0..10 {
            s.step(&mut p, &[Tensor::zeros(&[3])]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(s.step_count(), 10);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g² on step one, so Δ = lr·g/(|g|+ε)
        let mut p = vec![Tensor::new(vec![3], vec![0.0; 3])];
        let g = Tensor::new(vec![3], vec![0.3, -5.0, 100.0]);
        let mut s = AdamState::new(&p, AdamConfig::default());
        s.step(&mut p, std::slice::from_ref(&g)).unwrap();
        for (x, gi) in p[0].data().iter().zip(g.data()) {
            let expected = -3e-4 * gi / (gi.abs() + 1e-8);
            assert!((x - expected).abs() < 1e-15);
            assert!((x.abs() - 3e-4).abs() < 1e-10);
        }
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        let mut p = vec![Tensor::new(vec![2], vec![1.0, 1.0])];
        let config = AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        };
        let mut s = AdamState::new(&p, config);
        for _ in 0..5000 {
            let g = p[0].scale(2.0);
            s.step(&mut p, &[g]).unwrap();
        }
        let norm = p[0].dot(&p[0]).sqrt();
        assert!(norm < 1e-3, "‖θ‖ = {norm}");
    }

    #[test]
    fn deterministic_given_inputs() {
        let p0 = vec![Tensor::new(vec![2], vec![0.3, 0.7])];
        let g = vec![Tensor::new(vec![2], vec![0.1, -0.2])];
        let mut a = p0.clone();
        let mut b = p0.clone();
        let mut sa = AdamState::new(&a, AdamConfig::default());
        let mut sb = AdamState::new(&b, AdamConfig::default());
        sa.step(&mut a, &g).unwrap();
        sb.step(&mut b, &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut p = vec![Tensor::new(vec![2], vec![1.0, 1.0])];
        let mut s = AdamState::new(&p, AdamConfig::default());
        let err = s
            .step(&mut p, &[Tensor::new(vec![2], vec![f64::NAN, 0.0])])
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert_eq!(p[0].data(), &[1.0, 1.0]);
        assert_eq!(s.step_count(), 0);
    }
}
