use std::path::Path;

use mvp_core::meanflow::{fit_mean_flow, DensityTarget, DiracField, MeanFlowNet};
use mvp_core::theory::{
    boundary_error, check_gain_properties, estimate_gain, expected_max_of_two_normals,
    multiplicity_probe, InjectedField, MultiplicityGrid, OffsetField, OracleGrid, ProbeReport,
};
use mvp_core::Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::{CliError, CliResult, RunDir};

/// Point mass used by the multiplicity and boundary probes.
const A_STAR: f64 = 0.7;
const ORACLE_GRID_T_MAX: f64 = 0.8;
/// Required accuracy of the recovered injected constant.
const C_TOLERANCE: f64 = 1e-8;
const FAMILY_R_SQUARED: f64 = 1.0 - 1e-10;
/// The contrast offset must fit clearly worse than this.
const CONTRAST_R_SQUARED: f64 = 0.9;
/// Boundary error with the constraint must be at most this fraction of
/// the error without it.
const BOUNDARY_RATIO: f64 = 0.5;

#[derive(Clone, Debug, Serialize)]
pub struct TheorySummary {
    pub probes: Vec<(String, bool)>,
    pub pass: bool,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn gain_probe(cfg: &RunConfig) -> CliResult<ProbeReport> {
    let mut estimates = Vec::new();
    for &n in &cfg.gain_ns {
        let mut rng = Rng::new(cfg.seed).fork(n as u64);
        // value Q(a) = a under a standard normal policy
        let q = |a: &mvp_core::Tensor| a.clone();
        estimates.push(estimate_gain(
            q,
            |k, rng: &mut Rng| rng.normal_tensor(&[k, 1]),
            n,
            cfg.gain_samples,
            &mut rng,
        )?);
    }
    let report = check_gain_properties(&estimates);
    let exact_pair = expected_max_of_two_normals();
    let pair = report.estimates.iter().find(|e| e.n == 2);
    let pair_ok = pair.is_none_or(|e| (e.delta_hat - exact_pair).abs() <= 3.0 * e.std_err);
    let pass = report.pass && pair_ok;
    Ok(ProbeReport {
        probe: "best_of_n_gain".into(),
        inputs: json!({ "value": "Q(a) = a", "policy": "N(0, 1)", "ns": cfg.gain_ns, "samples": cfg.gain_samples, "seed": cfg.seed }),
        estimates: json!({ "report": report, "pair_quadrature": exact_pair, "pair_matches_quadrature": pair_ok }),
        pass,
    })
}

fn multiplicity_report(
    cfg: &RunConfig,
    trained_lambda0: Option<&MeanFlowNet>,
) -> CliResult<ProbeReport> {
    let oracle = DiracField::new(vec![A_STAR]);
    let grid = MultiplicityGrid::default();
    let injected = multiplicity_probe(
        &InjectedField {
            base: oracle.clone(),
            c: cfg.injected_c,
        },
        &oracle,
        &grid,
    )?;
    let contrast = multiplicity_probe(
        &OffsetField {
            base: oracle.clone(),
            offset: cfg.injected_c,
        },
        &oracle,
        &grid,
    )?;
    let recovered = injected
        .slices
        .iter()
        .all(|s| (s.c - cfg.injected_c).abs() <= C_TOLERANCE);
    let pass = recovered
        && injected.r_squared > FAMILY_R_SQUARED
        && contrast.r_squared < CONTRAST_R_SQUARED;
    let trained = trained_lambda0
        .map(|u| multiplicity_probe(u, &oracle, &grid))
        .transpose()?;
    Ok(ProbeReport {
        probe: "multiplicity".into(),
        inputs: json!({ "a_star": A_STAR, "injected_c": cfg.injected_c, "grid": grid }),
        estimates: json!({
            "injected": injected,
            "injected_recovered": recovered,
            "contrast_offset": contrast,
            "trained_without_boundary_loss": trained,
        }),
        pass,
    })
}

#[derive(Serialize)]
struct ProbeRow {
    seed: u64,
    lambda: f64,
    step: usize,
    loss: f64,
    mf: f64,
    ivc: f64,
}

/// Trains point-mass models with and without the boundary loss for each
/// probe seed; returns the boundary report and the first λ=0 model.
fn boundary_probe(
    cfg: &RunConfig,
    metrics: &mut csv::Writer<std::fs::File>,
) -> CliResult<(ProbeReport, Option<MeanFlowNet>)> {
    let target = DensityTarget::Dirac {
        a_star: vec![A_STAR],
    };
    let oracle = DiracField::new(vec![A_STAR]);
    let (a, t) = OracleGrid::dirac(A_STAR, ORACLE_GRID_T_MAX).boundary();
    let spec = cfg.field_spec(1, 0)?;
    let interval = cfg.fit_log_interval.max(1);
    let mut errors = [Vec::new(), Vec::new()];
    let mut first_plain = None;
    for &seed in &cfg.probe_seeds {
        for (slot, lambda) in [0.0, 1.0].into_iter().enumerate() {
            let mut rng = Rng::new(seed);
            let mut u = MeanFlowNet::init(spec, &mut rng)?;
            let train = mvp_core::meanflow::TrainConfig {
                steps: cfg.probe_steps,
                ..cfg.train_config(lambda)?
            };
            let losses = fit_mean_flow(&mut u, &target, &train, &mut rng)?;
            for (k, chunk) in losses.chunks(interval).enumerate() {
                let m = chunk.len() as f64;
                metrics.serialize(ProbeRow {
                    seed,
                    lambda,
                    step: k * interval + chunk.len(),
                    loss: chunk.iter().map(|l| l.total).sum::<f64>() / m,
                    mf: chunk.iter().map(|l| l.mf).sum::<f64>() / m,
                    ivc: chunk.iter().map(|l| l.ivc).sum::<f64>() / m,
                })?;
            }
            errors[slot].push(boundary_error(&u, &oracle, &a, &t)?);
            if slot == 0 && first_plain.is_none() {
                first_plain = Some(u);
            }
        }
    }
    metrics.flush()?;
    let (without, with) = (median(errors[0].clone()), median(errors[1].clone()));
    let pass = !cfg.probe_seeds.is_empty() && with <= BOUNDARY_RATIO * without;
    let report = ProbeReport {
        probe: "boundary".into(),
        inputs: json!({ "a_star": A_STAR, "seeds": cfg.probe_seeds, "steps": cfg.probe_steps, "lambdas": [0.0, 1.0], "required_ratio": BOUNDARY_RATIO }),
        estimates: json!({
            "boundary_error_lambda0": errors[0],
            "boundary_error_lambda1": errors[1],
            "median_lambda0": without,
            "median_lambda1": with,
            "ratio": with / without,
        }),
        pass,
    };
    Ok((report, first_plain))
}

/// Runs the gain, multiplicity and boundary probes; `Failed` if any
/// probe does not pass, after every report has been written.
pub fn theory(cfg: &RunConfig, root: &Path) -> CliResult<(RunDir, TheorySummary)> {
    let dir = RunDir::create(root, "theory", cfg)?;
    let mut metrics = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(dir.file("metrics.csv"))?;
    metrics.write_record(["seed", "lambda", "step", "loss", "mf", "ivc"])?;

    let gain = gain_probe(cfg)?;
    let (boundary, plain) = boundary_probe(cfg, &mut metrics)?;
    let multiplicity = multiplicity_report(cfg, plain.as_ref())?;
    let reports = [gain, multiplicity, boundary];
    for r in &reports {
        dir.write_json(&format!("{}.json", r.probe), r)?;
    }
    let probes: Vec<(String, bool)> = reports.iter().map(|r| (r.probe.clone(), r.pass)).collect();
    let summary = TheorySummary {
        pass: probes.iter().all(|p| p.1),
        probes,
    };
    dir.write_json("summary.json", &summary)?;
    Ok((dir, summary))
}

impl TheorySummary {
    pub fn into_result(self) -> CliResult<Self> {
        if self.pass {
            Ok(self)
        } else {
            let failed: Vec<&str> = self
                .probes
                .iter()
                .filter(|p| !p.1)
                .map(|p| p.0.as_str())
                .collect();
            Err(CliError::Failed(format!(
                "probes failed: {}",
                failed.join(", ")
            )))
        }
    }
}
