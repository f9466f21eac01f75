//! Command-line front end: experiment configs, the catalog, and report files.

pub mod catalog;
pub mod config;
pub mod experiments;
pub mod report;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{ExperimentConfig, Overrides};
pub use report::Report;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config keys or parameter values. Exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Output could not be written. Exit code 2.
    #[error("io error: {0}")]
    Io(String),
    /// The computation itself failed. Reported as a failed check, exit code 1.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl From<heatbound::Error> for CliError {
    fn from(e: heatbound::Error) -> Self {
        use heatbound::Error as E;
        match e {
            E::InvalidParameter(_)
            | E::Domain(_)
            | E::DimensionMismatch { .. }
            | E::IndexOutOfRange { .. }
            | E::Unstable { .. }
            | E::Precondition(_)
            | E::Json(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

/// Result of a completed run.
#[derive(Debug)]
pub struct Outcome {
    pub experiment: String,
    pub out_dir: PathBuf,
    pub report: Report,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        if self.report.passed() {
            0
        } else {
            1
        }
    }
}

/// Validate the config, run the experiment and write its files.
///
/// Config errors return early without touching the output directory. A
/// runtime failure is recorded as a single failed `error` row.
pub fn run(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let name = cfg
        .experiment
        .clone()
        .ok_or_else(|| CliError::Config("no experiment given; see `heatbound list`".into()))?;
    if !catalog::is_known(&name) {
        return Err(CliError::Config(format!("unknown experiment {name:?}; see `heatbound list`")));
    }
    if catalog::is_stochastic(&name) {
        cfg.require_seed()?;
    }
    let report = match experiments::run(&name, cfg) {
        Ok(r) => r,
        Err(CliError::Runtime(msg)) => {
            let mut r = Report::default();
            r.checks.push(report::CheckRow::error(&msg));
            r
        }
        Err(e) => return Err(e),
    };
    let out_dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("results").join(&name));
    let files = report::write_all(&out_dir, &name, cfg, &report)?;
    Ok(Outcome { experiment: name, out_dir, report, files })
}
