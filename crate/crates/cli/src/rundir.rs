use std::io;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::CliResult;

/// Output root: `MVP_RUN_ROOT`, else `./runs`.
pub fn default_root() -> PathBuf {
    std::env::var_os("MVP_RUN_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// A freshly created, never reused output directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// Creates `<root>/<command>-<timestamp>-seed<seed>`, adding a numeric
    /// suffix if that name is taken, and writes the config into it.
    pub fn create(root: &Path, command: &str, config: &RunConfig) -> CliResult<Self> {
        std::fs::create_dir_all(root)?;
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
        let base = format!("{command}-{stamp}-seed{}", config.seed);
        for k in 0.. {
            let name = if k == 0 {
                base.clone()
            } else {
                format!("{base}-{k}")
            };
            let path = root.join(name);
            match std::fs::create_dir(&path) {
                Ok(()) => {
                    let dir = Self { path };
                    std::fs::write(dir.file("config.toml"), config.to_toml())?;
                    return Ok(dir);
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e.into()),
            }
        }
        unreachable!()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn subdir(&self, name: &str) -> CliResult<PathBuf> {
        let p = self.path.join(name);
        std::fs::create_dir_all(&p)?;
        Ok(p)
    }

    pub fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(self.file(name), text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn never_reuses_a_directory() {
        let root = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let a = RunDir::create(root.path(), "fit2d", &cfg).unwrap();
        let b = RunDir::create(root.path(), "fit2d", &cfg).unwrap();
        assert_ne!(a.path(), b.path());
        for d in [&a, &b] {
            let name = d.path().file_name().unwrap().to_str().unwrap();
            assert!(
                name.starts_with("fit2d-") && name.contains("-seed0"),
                "{name}"
            );
        }
        let written = std::fs::read_to_string(a.file("config.toml")).unwrap();
        assert_eq!(RunConfig::from_toml(&written).unwrap(), cfg);
    }
}
