use std::path::{Path, PathBuf};

use super::metrics::{read_metrics, MetricsTable};
use crate::svg::{Chart, Mark, Series};
use crate::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    Return,
    Success,
    PolicyLoss,
    CriticLoss,
}

impl PlotKind {
    pub fn column(self) -> &'static str {
        match self {
            PlotKind::Return => "eval_return",
            PlotKind::Success => "eval_success",
            PlotKind::PolicyLoss => "policy_loss",
            PlotKind::CriticLoss => "critic_loss",
        }
    }

    fn label(self) -> &'static str {
        match self {
            PlotKind::Return => "evaluation return",
            PlotKind::Success => "success rate",
            PlotKind::PolicyLoss => "policy loss",
            PlotKind::CriticLoss => "critic loss",
        }
    }
}

/// One polyline per run over `step`, with the offline phase shaded.
pub fn learning_curve(runs: &[(String, MetricsTable)], kind: PlotKind) -> CliResult<Chart> {
    let mut chart = Chart::new(kind.label(), "step", kind.label(), Mark::Line);
    for (label, table) in runs {
        if table.headers.is_empty() && table.rows.is_empty() {
            continue;
        }
        let steps = table.numbers("step")?;
        let values = table.numbers(kind.column())?;
        let phases = table.strings("phase")?;
        if steps.is_empty() {
            continue;
        }
        let offline_end = steps
            .iter()
            .zip(&phases)
            .filter(|(_, p)| *p == "offline")
            .map(|(s, _)| *s)
            .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))));
        if let (None, Some(end)) = (&chart.band, offline_end) {
            chart.band = Some((0.0, end, "offline phase".into()));
        }
        chart.series.push(Series::new(
            label.clone(),
            steps.into_iter().zip(values).collect(),
        ));
    }
    Ok(chart)
}

fn metrics_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("metrics.csv")
    } else {
        p.to_path_buf()
    }
}

fn run_label(p: &Path) -> String {
    let dir = if p.is_dir() {
        p
    } else {
        p.parent().unwrap_or(p)
    };
    dir.file_name().map_or_else(
        || p.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

/// Draws `kind` for every run (a run directory or a metrics CSV) into
/// `out`, by default `plot_<column>.svg` in the first run's directory.
pub fn plot(runs: &[PathBuf], kind: PlotKind, out: Option<&Path>) -> CliResult<PathBuf> {
    let first = runs
        .first()
        .ok_or_else(|| CliError::Usage("plot needs at least one run".into()))?;
    let tables = runs
        .iter()
        .map(|r| Ok((run_label(r), read_metrics(&metrics_path(r))?)))
        .collect::<CliResult<Vec<_>>>()?;
    let chart = learning_curve(&tables, kind)?;
    let out = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let dir = if first.is_dir() {
                first.clone()
            } else {
                first.parent().map(Path::to_path_buf).unwrap_or_default()
            };
            dir.join(format!("plot_{}.svg", kind.column()))
        }
    };
    std::fs::write(&out, chart.render())?;
    Ok(out)
}
