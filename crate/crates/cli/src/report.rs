//! Report rows and the files written for each run.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use heatbound::{CheckResult, MCEstimate};

use crate::CliError;

/// A row of `checks.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub kind: String,
    pub params: String,
    pub bound: f64,
    pub observed: f64,
    pub margin: f64,
    pub passed: bool,
}

impl CheckRow {
    pub fn new(kind: &str, params: impl Into<String>, r: &CheckResult) -> Self {
        let params = params.into();
        let sep = if params.is_empty() { "" } else { ";" };
        Self {
            kind: kind.to_string(),
            params: format!("{params}{sep}tol={:e}", r.tolerance),
            bound: r.bound_value,
            observed: r.observed,
            margin: r.margin,
            passed: r.passed,
        }
    }

    /// A failed row standing in for a run that stopped with an error.
    pub fn error(message: &str) -> Self {
        Self {
            kind: "error".into(),
            params: message.replace(['\n', ','], " "),
            bound: f64::NAN,
            observed: f64::NAN,
            margin: f64::NAN,
            passed: false,
        }
    }
}

/// A row of `estimates.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub op: String,
    pub params_hash: String,
    pub value: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl EstimateRow {
    pub fn new(op: &str, params: &str, e: &MCEstimate) -> Self {
        Self {
            op: op.to_string(),
            params_hash: params_hash(op, params),
            value: e.value,
            stderr: e.stderr,
            n_paths: e.n_paths,
            seed: e.seed,
        }
    }

    pub fn exact(op: &str, params: &str, value: f64) -> Self {
        Self { op: op.to_string(), params_hash: params_hash(op, params), value, stderr: 0.0, n_paths: 0, seed: 0 }
    }
}

/// First 16 hex digits of `sha256(op \0 params)`.
pub fn params_hash(op: &str, params: &str) -> String {
    let mut h = Sha256::new();
    h.update(op.as_bytes());
    h.update([0u8]);
    h.update(params.as_bytes());
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Everything one experiment produced.
#[derive(Debug, Default)]
pub struct Report {
    pub checks: Vec<CheckRow>,
    pub estimates: Vec<EstimateRow>,
    /// Extra files, written next to the CSVs.
    pub artifacts: Vec<(String, Vec<u8>)>,
    /// Experiment-specific metadata for the JSON sidecar.
    pub details: serde_json::Map<String, serde_json::Value>,
}

impl Report {
    pub fn check(&mut self, kind: &str, params: impl Into<String>, r: &CheckResult) {
        self.checks.push(CheckRow::new(kind, params, r));
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.details.insert(key.to_string(), v);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckRow> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// `checks.csv` is rewritten on every run so reruns are byte-identical.
pub fn write_checks(path: &Path, rows: &[CheckRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    if rows.is_empty() {
        w.write_record(["kind", "params", "bound", "observed", "margin", "passed"]).map_err(|e| io_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// `estimates.csv` accumulates across runs; the header is written once.
pub fn append_estimates(path: &Path, rows: &[EstimateRow]) -> Result<(), CliError> {
    let fresh = !path.exists() || fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    if fresh && rows.is_empty() {
        w.write_record(["op", "params_hash", "value", "stderr", "n_paths", "seed"]).map_err(|e| io_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Serialize)]
struct Summary<'a> {
    experiment: &'a str,
    version: &'static str,
    timestamp: String,
    seed: Option<u64>,
    passed: bool,
    n_checks: usize,
    failures: Vec<&'a CheckRow>,
    config: &'a crate::ExperimentConfig,
    files: Vec<String>,
    details: &'a serde_json::Map<String, serde_json::Value>,
}

/// Write all files for a run into `dir` and return their paths.
pub fn write_all(
    dir: &Path,
    experiment: &str,
    config: &crate::ExperimentConfig,
    report: &Report,
) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let checks = dir.join("checks.csv");
    write_checks(&checks, &report.checks)?;
    let estimates = dir.join("estimates.csv");
    append_estimates(&estimates, &report.estimates)?;
    let mut files = vec![checks, estimates];
    for (name, bytes) in &report.artifacts {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| io_err(&p, e))?;
        files.push(p);
    }
    let summary_path = dir.join("summary.json");
    let summary = Summary {
        experiment,
        version: env!("CARGO_PKG_VERSION"),
        timestamp: chrono::Utc::now().to_rfc3339(),
        seed: config.seed,
        passed: report.passed(),
        n_checks: report.checks.len(),
        failures: report.failures(),
        config,
        files: files.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect(),
        details: &report.details,
    };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| io_err(&summary_path, e))?;
    fs::write(&summary_path, text + "\n").map_err(|e| io_err(&summary_path, e))?;
    files.push(summary_path);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_separates_fields() {
        assert_eq!(params_hash("a", "b"), params_hash("a", "b"));
        assert_ne!(params_hash("ab", ""), params_hash("a", "b"));
        assert_eq!(params_hash("a", "b").len(), 16);
    }

    #[test]
    fn estimates_append_with_one_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let row = EstimateRow::exact("y0", "x", 1.5);
        append_estimates(&p, std::slice::from_ref(&row)).unwrap();
        append_estimates(&p, &[row]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("op,params_hash,value,stderr,n_paths,seed\n"));
    }
}
