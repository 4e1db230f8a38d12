//! Results tables (one CSV row per run) and per-step logs.

use std::fmt;
use std::fs::OpenOptions;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::engine::StepOutcome;

/// One run in the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    #[serde(rename = "N")]
    pub n_trials: Option<usize>,
    #[serde(rename = "J")]
    pub n_selective: Option<usize>,
    pub seed: u64,
    pub coverage: f64,
    pub avg_width: f64,
    pub runtime_seconds: f64,
    pub updates_total: u64,
    pub config_hash: String,
    pub stream_hash: String,
}

impl ResultRow {
    /// Identity of the run within a sweep, independent of its outcome.
    pub fn key(&self) -> (String, Option<usize>, Option<usize>, u64, String, String) {
        (
            self.method.clone(),
            self.n_trials,
            self.n_selective,
            self.seed,
            self.config_hash.clone(),
            self.stream_hash.clone(),
        )
    }
}

/// Appends rows to `path`, writing the header only when the file is new or
/// empty.
pub fn append_results(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let fresh = std::fs::metadata(path)
        .map(|m| m.len() == 0)
        .unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| DataError::io(path, e))?;
    let mut out = csv::WriterBuilder::new()
        .has_headers(fresh)
        .from_writer(file);
    for row in rows {
        out.serialize(row).map_err(|e| DataError::csv(path, e))?;
    }
    out.flush().map_err(|e| DataError::io(path, e))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>, DataError> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| DataError::csv(path, e))?;
    reader
        .deserialize()
        .collect::<Result<Vec<ResultRow>, _>>()
        .map_err(|e| DataError::csv(path, e))
}

pub fn write_step_log(steps: &[StepOutcome], path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut out = csv::Writer::from_path(path).map_err(|e| DataError::csv(path, e))?;
    for s in steps {
        out.serialize(s).map_err(|e| DataError::csv(path, e))?;
    }
    out.flush().map_err(|e| DataError::io(path, e))
}

pub fn read_step_log(path: impl AsRef<Path>) -> Result<Vec<StepOutcome>, DataError> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| DataError::csv(path, e))?;
    reader
        .deserialize()
        .collect::<Result<Vec<StepOutcome>, _>>()
        .map_err(|e| DataError::csv(path, e))
}

/// Trailing-window coverage and width, one entry per step. Early steps
/// average over however many steps exist so far.
pub fn rolling_coverage(steps: &[StepOutcome], window: usize) -> Vec<(usize, f64, f64)> {
    let window = window.max(1);
    let mut covered = 0usize;
    let mut width = 0usize;
    steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            covered += usize::from(s.covered);
            width += s.set_size;
            if i >= window {
                covered -= usize::from(steps[i - window].covered);
                width -= steps[i - window].set_size;
            }
            let n = (i + 1).min(window) as f64;
            (s.t, covered as f64 / n, width as f64 / n)
        })
        .collect()
}

/// Sample mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self {
            mean: self.mean * factor,
            std: self.std * factor,
        }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// Summary of every run sharing a (method, N, J) configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub method: String,
    pub n_trials: Option<usize>,
    pub n_selective: Option<usize>,
    pub runs: usize,
    pub coverage: MeanStd,
    pub avg_width: MeanStd,
    pub runtime_seconds: MeanStd,
    pub updates_total: MeanStd,
}

type GroupKey = (String, Option<usize>, Option<usize>);

/// Groups rows by (method, N, J) in order of first appearance. Every row
/// must come from the same stream.
pub fn aggregate(rows: &[ResultRow]) -> Result<Vec<Aggregate>, DataError> {
    if let Some(first) = rows.first() {
        if let Some(odd) = rows.iter().find(|r| r.stream_hash != first.stream_hash) {
            return Err(DataError::Mismatch(format!(
                "rows mix stream hashes {} and {}",
                first.stream_hash, odd.stream_hash
            )));
        }
    }
    let mut groups: Vec<(GroupKey, Vec<&ResultRow>)> = Vec::new();
    for row in rows {
        let key = (row.method.clone(), row.n_trials, row.n_selective);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(row),
            None => groups.push((key, vec![row])),
        }
    }
    Ok(groups
        .into_iter()
        .map(|((method, n_trials, n_selective), members)| {
            let col = |f: fn(&ResultRow) -> f64| {
                MeanStd::of(&members.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            Aggregate {
                method,
                n_trials,
                n_selective,
                runs: members.len(),
                coverage: col(|r| r.coverage),
                avg_width: col(|r| r.avg_width),
                runtime_seconds: col(|r| r.runtime_seconds),
                updates_total: col(|r| r.updates_total as f64),
            }
        })
        .collect())
}
