use std::path::{Path, PathBuf};

use mvp_core::rl::{make_offline_dataset, Dataset};

use crate::config::RunConfig;
use crate::{CliResult, RunDir};

pub(crate) fn generate(cfg: &RunConfig) -> CliResult<Dataset> {
    let kind = cfg.env_kind()?;
    Ok(make_offline_dataset(
        kind,
        cfg.chunk,
        cfg.gamma,
        cfg.seed,
        cfg.dataset_episodes_for(kind),
    )?)
}

/// Writes the scripted dataset to `out`, or into a new run directory.
pub fn make_dataset(cfg: &RunConfig, out: Option<&Path>, root: &Path) -> CliResult<PathBuf> {
    let data = generate(cfg)?;
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => RunDir::create(root, "make-dataset", cfg)?.file("dataset.jsonl"),
    };
    data.write_jsonl(&path)?;
    Ok(path)
}
