//! Command-line driver: synthesize or load instance bundles, run the
//! splitting/primal-dual solvers, emit convergence CSVs and metric summaries,
//! and regenerate the brute-force oracle checks.
//!
//! Exit codes: 0 ok, 2 invalid input, 3 hypothesis violation, 4 oracle
//! failure.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use proxsplit::Error;

#[derive(Parser)]
#[command(name = "proxsplit", version, about = "Graph-structured proximal splitting solvers")]
struct Cli {
    /// Parallel width of the per-block solver phases (default: all cores).
    /// Numerical output is identical at any thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverKind {
    Pfdr,
    Pgfb,
    Ppd,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Pfdr => "pfdr",
            SolverKind::Pgfb => "pgfb",
            SolverKind::Ppd => "ppd",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GammaModeArg {
    Strict,
    Jacobi,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Eeg,
    Labeling,
}

#[derive(clap::Args)]
pub struct SolveArgs {
    /// Instance bundle directory.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, value_enum)]
    solver: Option<SolverKind>,
    /// Stopping rule: rel-evol=<x>, max-evol=<x> or iters=<n>.
    #[arg(long)]
    stop: Option<String>,
    #[arg(long)]
    max_iters: Option<u64>,
    /// Relaxation; defaults to min(1, 0.99 * admissible bound).
    #[arg(long)]
    rho: Option<f64>,
    /// Step-operator scaling in (0, 1).
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, value_enum)]
    gamma_mode: Option<GammaModeArg>,
    /// Split-weight reserve of the extra block in pgfb mode.
    #[arg(long)]
    reserve: Option<f64>,
    /// Seed for every random element (error injection).
    #[arg(long)]
    seed: Option<u64>,
    /// Inject errors on all three oracle channels with envelope c/k^s,
    /// written as "c,s".
    #[arg(long)]
    inject_errors: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Log every n-th iteration (0 = first and last only).
    #[arg(long)]
    log_every: Option<u64>,
    /// Flat key = value config file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct BenchArgs {
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Comma-separated stopping levels, loosest first (e.g. 1e-4,1e-5,1e-6).
    #[arg(long)]
    levels: Option<String>,
    /// Measure of the stopping levels: rel-evol (default for the inverse
    /// family) or max-evol (default for the labeling family).
    #[arg(long)]
    stop_kind: Option<String>,
    #[arg(long)]
    max_iters: Option<u64>,
    /// Iteration count of the reference run that pins the optimal value.
    #[arg(long)]
    reference_iters: Option<u64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, value_enum)]
    gamma_mode: Option<GammaModeArg>,
    #[arg(long)]
    reserve: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    log_every: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct OracleCheckArgs {
    #[arg(long, default_value_t = 12345)]
    seed: u64,
}

#[derive(clap::Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Vertex count (default 50 for eeg, 100 for labeling).
    #[arg(long)]
    vertices: Option<usize>,
    /// Observation count (eeg).
    #[arg(long, default_value_t = 20)]
    observations: usize,
    /// Planted support size (eeg).
    #[arg(long, default_value_t = 10)]
    support: usize,
    /// Observation noise level (eeg).
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Label count (labeling).
    #[arg(long, default_value_t = 3)]
    channels: usize,
    /// Label flip probability (labeling).
    #[arg(long, default_value_t = 0.2)]
    flip: f64,
    /// Constant TV weight override.
    #[arg(long)]
    lambda_tv: Option<f64>,
    /// Constant l1 weight override (eeg).
    #[arg(long)]
    lambda_l1: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance with one solver and write its convergence CSV and
    /// solution vector.
    Solve(SolveArgs),
    /// Run all three solvers against a shared reference optimum and write
    /// per-solver CSVs plus a summary table.
    Bench(BenchArgs),
    /// Regenerate every closed form against its independent brute-force route.
    OracleCheck(OracleCheckArgs),
    /// Generate a synthetic instance bundle.
    Synth(SynthArgs),
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::HypothesisViolation(_) | Error::LayoutInfeasible(_) | Error::DomainViolation(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Solve(args) => run::cmd_solve(args),
        Command::Bench(args) => run::cmd_bench(args),
        Command::OracleCheck(args) => run::cmd_oracle_check(args),
        Command::Synth(args) => run::cmd_synth(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
