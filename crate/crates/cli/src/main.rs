//! `preview-gain`: hypothesis checks, certificates, gain schedules,
//! closed-loop simulation and distance sweeps from the command line.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use preview_gain::Error;

/// Exit statuses.
pub const EXIT_OK: u8 = 0;
pub const EXIT_INFEASIBLE: u8 = 2;
pub const EXIT_INPUT: u8 = 3;
pub const EXIT_NONCONVERGENCE: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, unreadable or malformed files, I/O failures.
    Input(String),
    /// A hypothesis or feasibility condition does not hold.
    Infeasible(String),
    NonConvergence(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::NonConvergence(_) => EXIT_NONCONVERGENCE,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Infeasible(m) | CliError::NonConvergence(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_feasibility() {
            CliError::Infeasible(e.to_string())
        } else if matches!(e, Error::NonConvergence { .. }) {
            CliError::NonConvergence(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

/// `START:LEN` range of base times used for sup/inf over `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct WindowArg {
    pub start: usize,
    pub len: usize,
}

impl FromStr for WindowArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| format!("window must be START:LEN (got {s:?})"))?;
        let start = a.trim().parse().map_err(|e| format!("window start: {e}"))?;
        let len: usize = b
            .trim()
            .parse()
            .map_err(|e| format!("window length: {e}"))?;
        if len == 0 {
            return Err("window length must be positive".into());
        }
        Ok(WindowArg { start, len })
    }
}

/// Flags shared by every model-consuming subcommand.
#[derive(Args, Clone, Debug, Serialize)]
pub struct ModelArgs {
    /// Model JSON path, or `example:unicycle` for the built-in lemniscate model.
    #[arg(long)]
    pub model: String,
    /// Baseline ℓ2-gain bound γ in model units.
    #[arg(long)]
    pub gamma: f64,
    /// Window `START:LEN` for sup/inf over t; defaults to one period.
    #[arg(long)]
    pub window: Option<WindowArg>,
    /// Output directory for artifacts.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Mirror every CSV as JSON and print a JSON summary on stdout.
    #[arg(long)]
    #[serde(skip)]
    pub json: bool,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct CheckArgs {
    #[command(flatten)]
    pub common: ModelArgs,
    /// Lifting lengths, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub d: Vec<usize>,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct BoundArgs {
    #[command(flatten)]
    pub common: ModelArgs,
    /// Tolerated performance loss β, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub beta: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub d: Vec<usize>,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: ModelArgs,
    #[arg(long)]
    pub beta: f64,
    #[arg(long)]
    pub d: usize,
    /// Lifted preview blocks; defaults to the certified horizon.
    #[arg(long = "T")]
    pub horizon: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Finite-preview gains `K_{γ+β}(X_{t+1})`.
    Preview,
    /// Infinite-preview gains `K_γ(P_{t+1})` from the periodic solution.
    Baseline,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct SimArgs {
    #[command(flatten)]
    pub synth: SynthArgs,
    #[arg(long, value_enum, default_value_t = Policy::Preview)]
    pub policy: Policy,
    /// Seed for the traced disturbance, the ensemble and the gain iteration.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Simulation length N; defaults to three periods.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Factor with which the disturbance enters the model (`h` for the
    /// unicycle). Gains are reported in units of the unscaled disturbance.
    #[arg(long, default_value_t = 1.0)]
    pub w_scale: f64,
    /// Number of seeded disturbances checked for nonpositive partial sums.
    #[arg(long, default_value_t = 0)]
    pub ensemble: usize,
    /// Geometric decay of the seeded disturbances.
    #[arg(long, default_value_t = 0.995)]
    pub taper: f64,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: ModelArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub d: Vec<usize>,
    #[arg(long = "T", value_delimiter = ',', required = true)]
    pub horizon: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
pub enum ExampleName {
    Unicycle,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct ExampleArgs {
    #[arg(value_enum)]
    pub name: ExampleName,
    /// Lemniscate half-width.
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    /// Period N in steps.
    #[arg(long, default_value_t = 400)]
    pub period: usize,
    /// Sampling interval.
    #[arg(long, default_value_t = 0.05)]
    pub h: f64,
    /// Model JSON path; stdout when absent.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check invertibility, Gramian positivity and the part-2 bounds.
    Check(CheckArgs),
    /// Certificate constants and the sufficient preview horizon.
    Bound(BoundArgs),
    /// Finite-preview gain schedule and controller state.
    Synthesize(SynthArgs),
    /// Closed-loop trace, empirical gain and seeded ensemble.
    Simulate(SimArgs),
    /// δ(X_{t+1}, P_{t+1}) over t for each (d, T) pair.
    SweepDelta(SweepArgs),
    /// Write a built-in example model.
    Example(ExampleArgs),
}

#[derive(Parser, Debug)]
#[command(
    name = "preview-gain",
    version,
    about = "Finite-preview ℓ2-gain synthesis for periodic and LTV models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("PREVIEW_GAIN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        CliError::Input(format!(
            "PREVIEW_GAIN_THREADS must be a positive integer (got {raw:?})"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Input(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|()| commands::run(cli.command));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
