//! `fqchopt`: batch driver for the solver, the deep-quench studies and the
//! optimal-control engine.
//!
//! Exit codes: 0 success, 2 configuration or I/O error, 3 solver failure,
//! 4 assertion failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fqch_core::scenario::ScenarioConfig;
use fqch_core::Error;

#[derive(Debug, Parser)]
#[command(name = "fqchopt", version, about = "Fractional Cahn-Hilliard deep-quench solver and optimal control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Forward solve; writes the trajectory and the energy report.
    Solve(Common),
    /// Deep-quench rate study against the obstacle oracle.
    QuenchSweep(Common),
    /// Deep-quench continuation of the control problem.
    Optimize(Common),
    /// Finite-difference check of the adjoint gradients.
    GradCheck(Common),
    /// Brute-force comparison on the reduced parametrized instance.
    Oracle(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario JSON; keys override the named preset (default "a9-1d").
    #[arg(long)]
    config: PathBuf,
    /// Worker threads for independent runs (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory (default: the config's output_dir, else "fqchopt-out").
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure of a command, mapped to an exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Solver(String),
    Assertion(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Assertion(_) => 4,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Json(_) | Error::Io(_) => Failure::Config(e.to_string()),
            other => Failure::Solver(other.to_string()),
        }
    }
}

fn load(common: &Common) -> Result<(ScenarioConfig, PathBuf), Failure> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", common.config.display())))?;
    let mut scenario = ScenarioConfig::from_json_str(&text)
        .map_err(|e| Failure::Config(format!("{}: {e}", common.config.display())))?;
    if let Ok(seed) = std::env::var("FQCHOPT_SEED") {
        scenario.seed = seed
            .trim()
            .parse()
            .map_err(|_| Failure::Config(format!("FQCHOPT_SEED must be an unsigned integer, got {seed:?}")))?;
    }
    let out = common
        .out
        .clone()
        .or_else(|| scenario.output_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("fqchopt-out"));
    Ok((scenario, out))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (name, common) = match &cli.command {
        Command::Solve(c) => ("solve", c),
        Command::QuenchSweep(c) => ("quench-sweep", c),
        Command::Optimize(c) => ("optimize", c),
        Command::GradCheck(c) => ("grad-check", c),
        Command::Oracle(c) => ("oracle", c),
    };
    if let Some(jobs) = common.jobs {
        if jobs == 0 {
            return Err(Failure::Config("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;
    }
    let (scenario, out) = load(common)?;
    let ctx = commands::Context::new(name, scenario, &out)?;
    match cli.command {
        Command::Solve(_) => commands::solve(&ctx),
        Command::QuenchSweep(_) => commands::quench_sweep(&ctx),
        Command::Optimize(_) => commands::optimize(&ctx),
        Command::GradCheck(_) => commands::grad_check(&ctx),
        Command::Oracle(_) => commands::oracle(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, msg) = match &f {
                Failure::Config(m) => ("configuration error", m),
                Failure::Solver(m) => ("solver failure", m),
                Failure::Assertion(m) => ("assertion failed", m),
            };
            eprintln!("fqchopt: {kind}: {msg}");
            ExitCode::from(f.code())
        }
    }
}
