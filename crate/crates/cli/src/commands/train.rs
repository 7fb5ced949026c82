use std::fs::File;
use std::path::Path;

use mvp_core::nets::CriticEnsemble;
use mvp_core::rl::{Agent, Dataset, EvalReport, MetricsRow, ReplayBuffer};
use mvp_core::Rng;
use serde::Serialize;

use super::metrics::METRICS_COLUMNS;
use super::plot::{learning_curve, PlotKind};
use super::{dataset, EVAL_STREAM};
use crate::config::RunConfig;
use crate::{CliError, CliResult, RunDir};

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub env: String,
    pub seed: u64,
    pub offline_steps: usize,
    pub online_steps: usize,
    pub dataset_transitions: usize,
    pub final_eval: Option<EvalReport>,
}

fn save_critic(dir: &Path, prefix: &str, q: &CriticEnsemble) -> CliResult<()> {
    for (i, m) in q.members.iter().enumerate() {
        m.save(dir.join(format!("{prefix}_{i}.mvpc")))?;
    }
    Ok(())
}

/// Policy, online critics and target critics as parameter files.
pub(crate) fn save_agent(run: &RunDir, name: &str, agent: &Agent) -> CliResult<()> {
    let dir = run.subdir(name)?;
    agent.policy.net.save(dir.join("policy.mvpc"))?;
    save_critic(&dir, "critic", &agent.critic)?;
    save_critic(&dir, "target", &agent.target)?;
    Ok(())
}

/// Checks the dataset source before anything is written.
fn check_dataset_source(cfg: &RunConfig, make: bool) -> CliResult<()> {
    if !cfg.dataset.is_empty() {
        let path = Path::new(&cfg.dataset);
        if !path.exists() {
            return Err(CliError::Usage(format!(
                "dataset {} does not exist; create it with `mvp make-dataset --out {}` or pass --make-dataset",
                path.display(),
                path.display()
            )));
        }
    } else if !make {
        return Err(CliError::Usage(
            "no offline dataset: set `dataset` to a file made by `mvp make-dataset`, or pass --make-dataset".into(),
        ));
    }
    Ok(())
}

/// The configured dataset file, or a freshly generated one.
fn load_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    let kind = cfg.env_kind()?;
    let data = if cfg.dataset.is_empty() {
        dataset::generate(cfg)?
    } else {
        Dataset::read_jsonl(&cfg.dataset)?
    };
    let h = &data.header;
    if h.env != kind || h.chunk != cfg.chunk {
        return Err(CliError::Usage(format!(
            "dataset was made for env {} with chunk {}, but the run uses env {} with chunk {}",
            h.env, h.chunk, cfg.env, cfg.chunk
        )));
    }
    Ok(data)
}

struct MetricsSink {
    writer: csv::Writer<File>,
}

impl MetricsSink {
    fn create(path: &Path) -> CliResult<Self> {
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)?;
        writer.write_record(METRICS_COLUMNS)?;
        writer.flush()?;
        Ok(Self { writer })
    }

    fn write(&mut self, r: &MetricsRow) -> mvp_core::Result<()> {
        self.writer
            .serialize(r)
            .and_then(|()| self.writer.flush().map_err(csv::Error::from))
            .map_err(|e| mvp_core::Error::Format(format!("writing metrics: {e}")))
    }
}

/// Offline pre-training then online fine-tuning, with a metrics row every
/// `eval_interval` steps of each phase and checkpoints at both phase ends.
/// A non-finite update stops the run after saving the agent to `abort/`.
pub fn train(
    cfg: &RunConfig,
    root: &Path,
    make_dataset: bool,
) -> CliResult<(RunDir, TrainSummary)> {
    let kind = cfg.env_kind()?;
    let agent_cfg = cfg.agent_config()?;
    agent_cfg.validate()?;
    check_dataset_source(cfg, make_dataset)?;
    let data = load_dataset(cfg)?;
    let run = RunDir::create(root, "train", cfg)?;
    if cfg.dataset.is_empty() {
        data.write_jsonl(run.file("dataset.jsonl"))?;
    }
    let env = kind.build_chunked(cfg.chunk, cfg.gamma)?;
    let eval_seed = Rng::new(cfg.seed).fork(EVAL_STREAM).seed();

    let mut rng = Rng::new(cfg.seed);
    let mut agent = Agent::for_env(env.as_ref(), agent_cfg, &mut rng)?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
    let transitions = data.transitions.len();
    buffer.extend(data.transitions);

    let mut sink = MetricsSink::create(&run.file("metrics.csv"))?;
    let mut last: Option<MetricsRow> = None;
    let mut emit = |r: &MetricsRow| {
        last = Some(r.clone());
        sink.write(r)
    };
    let outcome = agent
        .offline_pretrain(
            &buffer,
            env.as_ref(),
            cfg.offline_steps,
            &mut rng,
            eval_seed,
            &mut emit,
        )
        .and_then(|()| {
            save_agent(&run, "offline", &agent).map_err(|e| mvp_core::Error::Format(e.to_string()))
        })
        .and_then(|()| {
            agent.online_finetune(
                &mut buffer,
                env.as_ref(),
                cfg.online_steps,
                &mut rng,
                eval_seed,
                &mut emit,
            )
        });
    if let Err(e) = outcome {
        if matches!(e, mvp_core::Error::NonFinite { .. }) {
            save_agent(&run, "abort", &agent)?;
        }
        return Err(e.into());
    }
    save_agent(&run, "final", &agent)?;

    let table = super::read_metrics(&run.file("metrics.csv"))?;
    std::fs::write(
        run.file("learning_curve.svg"),
        learning_curve(&[(cfg.env.clone(), table)], PlotKind::Return)?.render(),
    )?;
    let summary = TrainSummary {
        env: cfg.env.clone(),
        seed: cfg.seed,
        offline_steps: cfg.offline_steps,
        online_steps: cfg.online_steps,
        dataset_transitions: transitions,
        final_eval: last.map(|r| EvalReport {
            success_rate: r.eval_success,
            mean_return: r.eval_return,
            latency_us: r.act_latency_us.unwrap_or(f64::NAN),
        }),
    };
    run.write_json("summary.json", &summary)?;
    Ok((run, summary))
}
