use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::{Rng, Tensor};

/// Toy target distributions for unconditional density fitting.
#[derive(Clone, Debug, PartialEq)]
pub enum DensityTarget {
    /// Point mass.
    Dirac { a_star: Vec<f64> },
    /// Isotropic Gaussian `N(mu, sigma²·I)`.
    Gaussian { mu: Vec<f64>, sigma: f64 },
    /// Equal mixture of `N(±(1, 1), 0.25²·I)`.
    Gmm2,
    /// Uniform on the dark squares of a 4×4 board over `[−2, 2]²`.
    Checkerboard,
}

impl DensityTarget {
    pub fn dirac_default() -> Self {
        DensityTarget::Dirac { a_star: vec![0.7] }
    }

    pub fn gaussian_default() -> Self {
        DensityTarget::Gaussian {
            mu: vec![1.5, -0.5],
            sigma: 0.5,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DensityTarget::Dirac { .. } => "dirac",
            DensityTarget::Gaussian { .. } => "gaussian",
            DensityTarget::Gmm2 => "gmm2",
            DensityTarget::Checkerboard => "checkerboard",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DensityTarget::Dirac { a_star } => a_star.len(),
            DensityTarget::Gaussian { mu, .. } => mu.len(),
            DensityTarget::Gmm2 | DensityTarget::Checkerboard => 2,
        }
    }

    /// `[n×dim]` i.i.d. draws.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            match self {
                DensityTarget::Dirac { a_star } => data.extend_from_slice(a_star),
                DensityTarget::Gaussian { mu, sigma } => {
                    data.extend(mu.iter().map(|m| m + sigma * rng.standard_normal()))
                }
                DensityTarget::Gmm2 => {
                    let c = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                    data.push(c + 0.25 * rng.standard_normal());
                    data.push(c + 0.25 * rng.standard_normal());
                }
                DensityTarget::Checkerboard => {
                    // 8 dark cells: column i, row j with i + j even
                    let cell = rng.below(8);
                    let i = cell % 4;
                    let j = 2 * (cell / 4) + (i % 2);
                    data.push(-2.0 + i as f64 + rng.uniform());
                    data.push(-2.0 + j as f64 + rng.uniform());
                }
            }
        }
        Tensor::matrix(n, d, data)
    }
}

impl fmt::Display for DensityTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DensityTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dirac" => Ok(Self::dirac_default()),
            "gaussian" => Ok(Self::gaussian_default()),
            "gmm2" => Ok(DensityTarget::Gmm2),
            "checkerboard" => Ok(DensityTarget::Checkerboard),
            other => Err(Error::Format(format!(
                "unknown density target `{other}` (expected dirac, gaussian, gmm2 or checkerboard)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkerboard_lands_on_dark_cells() {
        let x = DensityTarget::Checkerboard.sample(5000, &mut Rng::new(1));
        for i in 0..x.rows() {
            let (cx, cy) = (
                (x.get2(i, 0) + 2.0).floor() as i64,
                (x.get2(i, 1) + 2.0).floor() as i64,
            );
            assert!((0..4).contains(&cx) && (0..4).contains(&cy));
            assert_eq!((cx + cy) % 2, 0);
        }
    }

    #[test]
    fn gmm_is_balanced() {
        let x = DensityTarget::Gmm2.sample(10_000, &mut Rng::new(2));
        let upper = (0..x.rows()).filter(|&i| x.get2(i, 0) > 0.0).count() as f64 / 1e4;
        assert!((upper - 0.5).abs() < 0.02);
    }

    #[test]
    fn names_round_trip() {
        for name in ["dirac", "gaussian", "gmm2", "checkerboard"] {
            assert_eq!(name.parse::<DensityTarget>().unwrap().name(), name);
        }
        assert!("moons".parse::<DensityTarget>().is_err());
    }
}
