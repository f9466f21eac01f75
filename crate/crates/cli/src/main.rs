use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use heatbound_cli::{catalog, CliError, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "heatbound", version, about = "Numerical checks of heat-equation gradient bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write checks.csv, estimates.csv and summary.json.
    Run(RunArgs),
    /// List the available experiments.
    List,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment name (same as --experiment).
    name: Option<String>,
    #[arg(long)]
    experiment: Option<String>,
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default results/<experiment>).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// Grid points per axis.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Bound kind for gradbound, transform name for psi.
    #[arg(long)]
    kind: Option<String>,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("HEATBOUND_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::Config(format!("HEATBOUND_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot configure thread pool: {e}")))
}

fn run(args: RunArgs) -> Result<u8, CliError> {
    configure_threads()?;
    let experiment = match (args.name, args.experiment) {
        (Some(a), Some(b)) if a != b => {
            return Err(CliError::Config(format!("conflicting experiment names {a:?} and {b:?}")))
        }
        (a, b) => a.or(b),
    };
    let base = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let cfg = base.apply(Overrides {
        experiment,
        seed: args.seed,
        out: args.out,
        paths: args.paths,
        dt: args.dt,
        grid: args.grid,
        tol: args.tol,
        kind: args.kind,
    });
    let outcome = heatbound_cli::run(&cfg)?;
    let failures = outcome.report.failures();
    for f in &failures {
        eprintln!("FAIL {} [{}]: bound {} observed {} margin {}", f.kind, f.params, f.bound, f.observed, f.margin);
    }
    println!(
        "{}: {}/{} checks passed, results in {}",
        outcome.experiment,
        outcome.report.checks.len() - failures.len(),
        outcome.report.checks.len(),
        outcome.out_dir.display()
    );
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            print!("{}", catalog::render());
            ExitCode::SUCCESS
        }
        Command::Run(args) => match run(args) {
            Ok(code) => ExitCode::from(code),
            Err(e) => {
                eprintln!("heatbound: {e}");
                ExitCode::from(e.exit_code())
            }
        },
    }
}
