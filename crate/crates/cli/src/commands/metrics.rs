use std::path::Path;

use crate::{CliError, CliResult};

/// Columns of a training metrics file.
pub const METRICS_COLUMNS: [&str; 9] = [
    "step",
    "phase",
    "policy_loss",
    "mf_loss",
    "ivc_loss",
    "critic_loss",
    "eval_success",
    "eval_return",
    "act_latency_us",
];

/// A metrics CSV held as named string columns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl MetricsTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    /// Parsed values of `name`; empty cells become NaN.
    pub fn numbers(&self, name: &str) -> CliResult<Vec<f64>> {
        let i = self
            .column(name)
            .ok_or_else(|| CliError::Usage(format!("metrics have no `{name}` column")))?;
        self.rows
            .iter()
            .map(|r| {
                let cell = r.get(i).map(String::as_str).unwrap_or("");
                if cell.is_empty() {
                    Ok(f64::NAN)
                } else {
                    cell.parse().map_err(|_| {
                        CliError::Usage(format!("`{cell}` in column {name} is not a number"))
                    })
                }
            })
            .collect()
    }

    pub fn strings(&self, name: &str) -> CliResult<Vec<String>> {
        let i = self
            .column(name)
            .ok_or_else(|| CliError::Usage(format!("metrics have no `{name}` column")))?;
        Ok(self
            .rows
            .iter()
            .map(|r| r.get(i).cloned().unwrap_or_default())
            .collect())
    }
}

pub fn read_metrics(path: &Path) -> CliResult<MetricsTable> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader.headers()?.iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()?;
    Ok(MetricsTable { headers, rows })
}
