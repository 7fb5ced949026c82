use mvp_core::meanflow::{
    energy_distance, euler_sample, fit_flow_matching, fit_mean_flow, one_step_sample,
    DensityTarget, DiracField, DistanceReport, FlowMatchNet, LossParts, MeanFlowNet, MeanVelocity,
};
use mvp_core::theory::{boundary_error, grid_mse, OracleGrid};
use mvp_core::{Rng, Tensor};
use serde::Serialize;
use std::path::Path;

use super::REFERENCE_STREAM;
use crate::config::RunConfig;
use crate::svg::{Chart, Mark, Series};
use crate::{CliResult, RunDir};

/// Latest lower time on the oracle grid; the exact field is singular at 1.
const ORACLE_GRID_T_MAX: f64 = 0.8;
/// Points per set drawn in the overlay figure.
const OVERLAY_POINTS: usize = 1000;

#[derive(Clone, Debug, Serialize)]
pub struct FitModelReport {
    pub model: String,
    pub lambda: Option<f64>,
    pub final_loss: f64,
    pub distance: DistanceReport,
    pub oracle_mse: Option<f64>,
    pub boundary_error: Option<f64>,
    pub samples_file: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Fit2dReport {
    pub target: String,
    pub seed: u64,
    pub steps: usize,
    pub models: Vec<FitModelReport>,
}

#[derive(Serialize)]
struct FitRow {
    step: usize,
    model: &'static str,
    lambda: Option<f64>,
    loss: f64,
    mf: Option<f64>,
    ivc: Option<f64>,
}

fn moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
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

fn head(x: &Tensor, n: usize) -> Tensor {
    let n = n.min(x.rows());
    Tensor::matrix(n, x.cols(), x.data()[..n * x.cols()].to_vec())
}

/// Moments over all samples, energy distance over the first
/// `distance_samples` of each set. Gaussian targets use exact moments.
fn score(
    samples: &Tensor,
    reference: &Tensor,
    target: &DensityTarget,
    distance_samples: usize,
) -> CliResult<DistanceReport> {
    let ed = energy_distance(
        &head(samples, distance_samples),
        &head(reference, distance_samples),
    )?;
    let (mean, var) = match target {
        DensityTarget::Gaussian { mu, sigma } => (mu.clone(), vec![sigma * sigma; mu.len()]),
        _ => moments(reference),
    };
    Ok(DistanceReport::moments_against(samples, &mean, &var, ed))
}

fn write_samples(path: &Path, x: &Tensor) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..x.cols()).map(|k| format!("dim{k}")))?;
    for i in 0..x.rows() {
        w.write_record(x.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_oracle_grid<U: MeanVelocity>(
    path: &Path,
    u: &U,
    oracle: &DiracField,
    grid: &OracleGrid,
) -> CliResult<()> {
    let (a, t, r) = grid.tensors();
    let s = Tensor::zeros(&[grid.len(), 0]);
    let model = u.eval(&a, &t, &r, &s);
    let exact = oracle.eval(&a, &t, &r, &s);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["a", "t", "r", "u_model", "u_oracle"])?;
    for i in 0..grid.len() {
        w.write_record(
            [
                grid.a[i],
                grid.t[i],
                grid.r[i],
                model.data()[i],
                exact.data()[i],
            ]
            .map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}

fn interval_rows(losses: &[LossParts], interval: usize, lambda: f64) -> Vec<FitRow> {
    losses
        .chunks(interval.max(1))
        .scan(0, |step, chunk| {
            *step += chunk.len();
            let k = chunk.len() as f64;
            Some(FitRow {
                step: *step,
                model: "mean_flow",
                lambda: Some(lambda),
                loss: chunk.iter().map(|l| l.total).sum::<f64>() / k,
                mf: Some(chunk.iter().map(|l| l.mf).sum::<f64>() / k),
                ivc: Some(chunk.iter().map(|l| l.ivc).sum::<f64>() / k),
            })
        })
        .collect()
}

/// Points to draw: sorted values against quantile level for 1-D sets,
/// the first two coordinates otherwise.
fn overlay_points(x: &Tensor) -> Vec<(f64, f64)> {
    let x = head(x, OVERLAY_POINTS);
    if x.cols() == 1 {
        let mut v = x.data().to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        v.into_iter()
            .enumerate()
            .map(|(i, a)| (a, (i as f64 + 0.5) / n))
            .collect()
    } else {
        (0..x.rows()).map(|i| (x.row(i)[0], x.row(i)[1])).collect()
    }
}

/// Fits one mean-flow model per IVC weight plus a flow-matching baseline,
/// each from the same initial stream, and scores their samples.
pub fn fit2d(cfg: &RunConfig, root: &Path) -> CliResult<(RunDir, Fit2dReport)> {
    let target = cfg.target()?;
    let dir = RunDir::create(root, "fit2d", cfg)?;
    let spec = cfg.field_spec(target.dim(), 0)?;
    let none = Tensor::zeros(&[1, 0]);
    let reference = target.sample(
        cfg.fit_samples,
        &mut Rng::new(cfg.seed).fork(REFERENCE_STREAM),
    );
    write_samples(&dir.file("samples_target.csv"), &reference)?;

    let mut metrics = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(dir.file("metrics.csv"))?;
    metrics.write_record(["step", "model", "lambda", "loss", "mf", "ivc"])?;
    let mut models = Vec::new();
    let mut overlay = Chart::new(
        format!("{} samples", target.name()),
        if target.dim() == 1 { "a" } else { "dim0" },
        if target.dim() == 1 {
            "quantile"
        } else {
            "dim1"
        },
        if target.dim() == 1 {
            Mark::Line
        } else {
            Mark::Dot
        },
    );
    overlay
        .series
        .push(Series::new("target", overlay_points(&reference)));

    for lambda in cfg.fit_lambdas() {
        let mut rng = Rng::new(cfg.seed);
        let mut u = MeanFlowNet::init(spec, &mut rng)?;
        let losses = fit_mean_flow(&mut u, &target, &cfg.train_config(lambda)?, &mut rng)?;
        for row in interval_rows(&losses, cfg.fit_log_interval, lambda) {
            metrics.serialize(row)?;
        }
        let samples = one_step_sample(&u, &none, cfg.fit_samples, &mut rng, false);
        let name = format!("samples_mean_flow_lambda{lambda}.csv");
        write_samples(&dir.file(&name), &samples)?;
        let (mut oracle_mse, mut boundary) = (None, None);
        if let DensityTarget::Dirac { a_star } = &target {
            if a_star.len() == 1 {
                let oracle = DiracField::new(a_star.clone());
                let grid = OracleGrid::dirac(a_star[0], ORACLE_GRID_T_MAX);
                write_oracle_grid(
                    &dir.file(&format!("oracle_grid_lambda{lambda}.csv")),
                    &u,
                    &oracle,
                    &grid,
                )?;
                oracle_mse = Some(grid_mse(&u, &oracle, &grid));
                let (a, t) = grid.boundary();
                boundary = Some(boundary_error(&u, &oracle, &a, &t)?);
            }
        }
        overlay.series.push(Series::new(
            format!("mean flow λ={lambda}"),
            overlay_points(&samples),
        ));
        models.push(FitModelReport {
            model: "mean_flow".into(),
            lambda: Some(lambda),
            final_loss: losses.last().map_or(f64::NAN, |l| l.total),
            distance: score(&samples, &reference, &target, cfg.distance_samples)?,
            oracle_mse,
            boundary_error: boundary,
            samples_file: name,
        });
    }

    let mut rng = Rng::new(cfg.seed);
    let mut v = FlowMatchNet::init(spec, &mut rng)?;
    let losses = fit_flow_matching(&mut v, &target, &cfg.train_config(0.0)?, &mut rng)?;
    for (k, chunk) in losses.chunks(cfg.fit_log_interval.max(1)).enumerate() {
        let loss = chunk.iter().sum::<f64>() / chunk.len() as f64;
        let step = (k * cfg.fit_log_interval.max(1) + chunk.len()).min(losses.len());
        metrics.serialize(FitRow {
            step,
            model: "flow_matching",
            lambda: None,
            loss,
            mf: None,
            ivc: None,
        })?;
    }
    metrics.flush()?;
    let samples = euler_sample(&v, &none, cfg.fit_samples, cfg.euler_steps, &mut rng, false)?;
    write_samples(&dir.file("samples_flow_matching.csv"), &samples)?;
    overlay.series.push(Series::new(
        format!("flow matching T={}", cfg.euler_steps),
        overlay_points(&samples),
    ));
    models.push(FitModelReport {
        model: "flow_matching".into(),
        lambda: None,
        final_loss: losses.last().copied().unwrap_or(f64::NAN),
        distance: score(&samples, &reference, &target, cfg.distance_samples)?,
        oracle_mse: None,
        boundary_error: None,
        samples_file: "samples_flow_matching.csv".into(),
    });

    std::fs::write(dir.file("samples.svg"), overlay.render())?;
    let report = Fit2dReport {
        target: target.name().into(),
        seed: cfg.seed,
        steps: cfg.fit_steps,
        models,
    };
    dir.write_json("report.json", &report)?;
    Ok((dir, report))
}
