use serde::Serialize;

use crate::error::{contract, Result};
use crate::Tensor;

fn mean_pair_distance(x: &Tensor, y: &Tensor) -> f64 {
    let d = x.cols();
    let mut total = 0.0;
    for i in 0..x.rows() {
        let xi = x.row(i);
        let mut row_sum = 0.0;
        for j in 0..y.rows() {
            let yj = y.row(j);
            let mut sq = 0.0;
            for k in 0..d {
                let diff = xi[k] - yj[k];
                sq += diff * diff;
            }
            row_sum += sq.sqrt();
        }
        total += row_sum;
    }
    total / (x.rows() * y.rows()) as f64
}

/// `2·E‖x − y‖ − E‖x − x′‖ − E‖y − y′‖`, every expectation averaged over
/// all ordered pairs including `i = j`. With that convention identical
/// sets score exactly zero and the value is never negative.
pub fn energy_distance(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.rows() == 0 || y.rows() == 0 || x.cols() != y.cols() {
        return Err(contract(format!(
            "energy distance between {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let cross = mean_pair_distance(x, y);
    let within_x = mean_pair_distance(x, x);
    let within_y = mean_pair_distance(y, y);
    Ok(2.0 * cross - within_x - within_y)
}

fn column_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    let mean: Vec<f64> = x.sum_rows().data().iter().map(|s| s / n).collect();
    let mut var = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        for (k, v) in x.row(i).iter().enumerate() {
            var[k] += (v - mean[k]).powi(2) / n;
        }
    }
    (mean, var)
}

/// Sample-quality summary of generated points against reference points.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistanceReport {
    pub energy_distance: f64,
    /// `|mean(x) − mean(y)|` per dimension.
    pub mean_error: Vec<f64>,
    /// `|var(x) − var(y)|` per dimension.
    pub cov_error: Vec<f64>,
    /// `var(x)/var(y) − 1` per dimension.
    pub var_rel_error: Vec<f64>,
}

impl DistanceReport {
    /// `samples` scored against `reference`.
    pub fn compare(samples: &Tensor, reference: &Tensor) -> Result<Self> {
        let energy_distance = energy_distance(samples, reference)?;
        let (mx, vx) = column_moments(samples);
        let (my, vy) = column_moments(reference);
        Ok(Self {
            energy_distance,
            mean_error: mx.iter().zip(&my).map(|(a, b)| (a - b).abs()).collect(),
            cov_error: vx.iter().zip(&vy).map(|(a, b)| (a - b).abs()).collect(),
            var_rel_error: vx.iter().zip(&vy).map(|(a, b)| a / b - 1.0).collect(),
        })
    }

    /// Against known target moments instead of reference samples; the
    /// energy distance is then left to the caller's reference set.
    pub fn moments_against(
        samples: &Tensor,
        mean: &[f64],
        var: &[f64],
        energy_distance: f64,
    ) -> Self {
        let (mx, vx) = column_moments(samples);
        Self {
            energy_distance,
            mean_error: mx.iter().zip(mean).map(|(a, b)| (a - b).abs()).collect(),
            cov_error: vx.iter().zip(var).map(|(a, b)| (a - b).abs()).collect(),
            var_rel_error: vx.iter().zip(var).map(|(a, b)| a / b - 1.0).collect(),
        }
    }
}
