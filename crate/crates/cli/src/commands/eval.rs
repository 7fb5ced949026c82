use std::path::Path;

use mvp_core::meanflow::{FlowMatchNet, MeanFlowNet};
use mvp_core::nets::{CriticEnsemble, MlpParams};
use mvp_core::rl::{evaluate, EulerSteps, EvalReport, OneStep};
use mvp_core::Rng;
use serde::Serialize;

use super::EVAL_STREAM;
use crate::config::RunConfig;
use crate::{CliError, CliResult, RunDir};

#[derive(Clone, Debug, Serialize)]
pub struct EvalSummary {
    pub checkpoint: String,
    pub episodes: usize,
    pub best_of_n: usize,
    pub one_step: EvalReport,
    /// Per-action latency of best-of-N with a `euler_steps` flow-matching
    /// sampler of the same width and depth. Latency does not depend on the
    /// weights, so the network is freshly initialized.
    pub euler_latency_us: f64,
    pub speedup: f64,
}

fn load(path: &Path) -> CliResult<MlpParams> {
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "missing checkpoint {}",
            path.display()
        )));
    }
    Ok(MlpParams::load(path)?)
}

/// Evaluates the policy and online critics saved under
/// `<run>/<checkpoint>/`, writing `eval.json` and a one-row metrics file
/// to a new run directory.
pub fn eval(
    cfg: &RunConfig,
    run: &Path,
    checkpoint: &str,
    root: &Path,
) -> CliResult<(RunDir, EvalSummary)> {
    let kind = cfg.env_kind()?;
    let env = kind.build_chunked(cfg.chunk, cfg.gamma)?;
    let dir = run.join(checkpoint);
    let spec = cfg.field_spec(env.action_dim(), env.state_dim())?;
    let policy = MeanFlowNet::from_params(spec, load(&dir.join("policy.mvpc"))?)?;
    let members = (0..cfg.ensemble_size.max(1))
        .map(|i| load(&dir.join(format!("critic_{i}.mvpc"))))
        .collect::<CliResult<_>>()?;
    let critic = CriticEnsemble { members };

    let n = cfg.best_of_n_for(kind);
    let episodes = cfg.eval_episodes.max(1);
    let seed = Rng::new(cfg.seed).fork(EVAL_STREAM).seed();
    let one_step = evaluate(&OneStep(&policy), &critic, env.as_ref(), episodes, n, seed)?;
    let baseline = FlowMatchNet::init(spec, &mut Rng::new(cfg.seed))?;
    let euler = evaluate(
        &EulerSteps {
            field: &baseline,
            steps: cfg.euler_steps,
        },
        &critic,
        env.as_ref(),
        episodes,
        n,
        seed,
    )?;

    let out = RunDir::create(root, "eval", cfg)?;
    let mut w = csv::Writer::from_path(out.file("metrics.csv"))?;
    w.write_record([
        "checkpoint",
        "episodes",
        "best_of_n",
        "eval_success",
        "eval_return",
    ])?;
    w.write_record([
        checkpoint.to_string(),
        episodes.to_string(),
        n.to_string(),
        one_step.success_rate.to_string(),
        one_step.mean_return.to_string(),
    ])?;
    w.flush()?;
    let summary = EvalSummary {
        checkpoint: dir.display().to_string(),
        episodes,
        best_of_n: n,
        one_step,
        euler_latency_us: euler.latency_us,
        speedup: euler.latency_us / one_step.latency_us,
    };
    out.write_json("eval.json", &summary)?;
    Ok((out, summary))
}
