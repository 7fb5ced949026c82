//! One entry point per subcommand. Each takes a validated [`RunConfig`]
//! and an output root so tests can drive them in-process.

mod dataset;
mod eval;
mod fit2d;
mod metrics;
mod plot;
mod theory;
mod train;

pub use dataset::make_dataset;
pub use eval::{eval, EvalSummary};
pub use fit2d::{fit2d, Fit2dReport, FitModelReport};
pub use metrics::{read_metrics, MetricsTable, METRICS_COLUMNS};
pub use plot::{plot, PlotKind};
pub use theory::{theory, TheorySummary};
pub use train::{train, TrainSummary};

use mvp_core::gradcheck::{run_gradcheck, GradcheckReport};

use crate::config::RunConfig;
use crate::CliResult;

/// Stream that seeds evaluation rollouts, kept apart from training.
pub(crate) const EVAL_STREAM: u64 = 1;
/// Stream for reference samples of density targets.
pub(crate) const REFERENCE_STREAM: u64 = 2;

/// The finite-difference suite over `gradcheck_configs` random configurations.
pub fn gradcheck(cfg: &RunConfig) -> CliResult<GradcheckReport> {
    Ok(run_gradcheck(cfg.gradcheck_configs, cfg.seed)?)
}
