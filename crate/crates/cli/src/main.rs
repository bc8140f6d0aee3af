//! `overpoll`: analyze, simulate and optimize overloaded polling networks
//! described by a JSON document.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 parse or usage error, 3 model
//! validation error, 4 numeric failure.

mod commands;
mod input;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use overpoll::fluid::FluidError;
use overpoll::model::ModelError;
use overpoll::optimizer::OptError;
use overpoll::simulator::SimError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Parse(_) | CliError::Usage(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<overpoll::Error> for CliError {
    fn from(e: overpoll::Error) -> Self {
        match e {
            overpoll::Error::Model(m) => m.into(),
            overpoll::Error::Fluid(FluidError::NotOverloaded(rho)) => ModelError::NotOverloaded { rho }.into(),
            overpoll::Error::Fluid(FluidError::Domain(m)) => CliError::Usage(m),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<OptError> for CliError {
    fn from(e: OptError) -> Self {
        match e {
            OptError::NothingEvaluated(inner) => inner.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Model(m) => m.into(),
            SimError::Config(m) => CliError::Usage(m),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "overpoll", version, about = "Overloaded cyclic polling networks: fluid limit, simulation, gating search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load quantities, offspring matrices, Perron pair and growth rate.
    Analyze(AnalyzeArgs),
    /// Fluid skeleton JSON and a trajectory CSV on a grid.
    Fluid(FluidArgs),
    /// Scaled simulation traces with fitted phases.
    Simulate(SimArgs),
    /// Median distance of scaled paths to the fluid limit, per n.
    Validate(SimArgs),
    /// Search gating indices minimizing the growth rate.
    Optimize(OptimizeArgs),
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Also write analysis.json and a manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FluidArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// LO:HI:STEP, or one time.
    #[arg(long, default_value = "0:10:0.01")]
    window: String,
    /// Phase in [1, theta).
    #[arg(long, default_value_t = 1.0)]
    xi: f64,
}

#[derive(Args, Debug)]
struct SimArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Base seed [default: sim.seed, else 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Scaling exponents, INT[,INT...]; 0 records the raw path.
    #[arg(long)]
    n: Option<String>,
    /// Number of replications [default: sim.seeds, else 3 for simulate and 20 for validate].
    #[arg(long)]
    seeds: Option<u64>,
    /// Scaled time window LO:HI:STEP [default: sim.window, else 0.5:5:0.01].
    #[arg(long)]
    window: Option<String>,
    /// Maximum number of events per run.
    #[arg(long)]
    event_cap: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Exhaustive,
    Ga,
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Exhaustive)]
    mode: Mode,
    /// Candidates per queue are 1..=KMAX and inf; 0 leaves only inf.
    #[arg(long, default_value_t = 32)]
    kmax: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    population: usize,
    #[arg(long, default_value_t = 100)]
    generations: usize,
    #[arg(long, default_value_t = 0.1)]
    mutation: f64,
    #[arg(long, default_value_t = 0.8)]
    crossover: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => commands::analyze(&a),
        Command::Fluid(a) => commands::fluid(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Validate(a) => commands::validate(&a),
        Command::Optimize(a) => commands::optimize(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
