//! Batch front end for the `oqw` binary: model files in, reports out.

pub mod commands;
pub mod model;
pub mod report;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use oqw_core::error::OqwError;

pub use model::{InputError, LoadedModel, ModelFile};
pub use report::Report;

/// Directory holding the bundled example models.
pub const BUNDLED_MODELS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/models");

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_HYPOTHESIS: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "oqw", version, about = "Hitting times, stationary states and recurrence of open quantum random walks")]
pub struct Cli {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HittingMode {
    Discrete,
    Poisson,
    CtLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    #[value(name = "1")]
    First,
    #[value(name = "2")]
    Stationary,
    #[value(name = "ct")]
    Continuous,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check trace preservation, unitality and generator completeness.
    Validate(FileArg),
    /// Hitting probability and mean hitting time between two sites.
    Hitting(HittingArgs),
    /// Stationary state and spectral data.
    Stationary(StationaryArgs),
    /// Mean hitting time formulas through the fundamental matrix.
    Mhtf(MhtfArgs),
    /// Kac identity for mean return times.
    Kac(KacArgs),
    /// Monitored and series recurrence, with skeleton comparison for generators.
    Recurrence(RecurrenceArgs),
    /// Monte Carlo trajectory estimate of a hitting time.
    Simulate(SimulateArgs),
    /// Run the checks declared in model files (bundled models by default).
    CheckAll(CheckAllArgs),
}

#[derive(Debug, Args)]
pub struct FileArg {
    pub file: PathBuf,
}

#[derive(Debug, Args)]
pub struct HittingArgs {
    pub file: PathBuf,
    /// Start site (1-based).
    #[arg(long)]
    pub from: usize,
    /// Target site (1-based).
    #[arg(long)]
    pub to: usize,
    /// Named initial density at the start site.
    #[arg(long)]
    pub state: Option<String>,
    #[arg(long, value_enum, default_value_t = HittingMode::Discrete)]
    pub mode: HittingMode,
    /// Measurement rate for the Poisson mode.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StationaryArgs {
    pub file: PathBuf,
    /// Use the generator instead of the discrete walk.
    #[arg(long)]
    pub ct: bool,
}

#[derive(Debug, Args)]
pub struct MhtfArgs {
    pub file: PathBuf,
    #[arg(long, value_enum, default_value_t = Which::First)]
    pub which: Which,
    #[arg(long)]
    pub state: Option<String>,
    /// Residual tolerance (default 1e-8, or 1e-6 for the continuous-time formula).
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct KacArgs {
    pub file: PathBuf,
    /// Continuous-time version on one-dimensional vertices.
    #[arg(long)]
    pub ct: bool,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RecurrenceArgs {
    pub file: PathBuf,
    /// Extra skeleton step; implies the continuous-time analysis.
    #[arg(long)]
    pub delta: Vec<f64>,
    /// Use the generator even without `--delta`.
    #[arg(long)]
    pub ct: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub file: PathBuf,
    #[arg(long)]
    pub from: usize,
    #[arg(long)]
    pub to: usize,
    #[arg(long)]
    pub state: Option<String>,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Poisson measurement rate; without it the walk (or the jump process) is sampled.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Sample the uniformized jump process of the generator.
    #[arg(long)]
    pub jump: bool,
    /// Step (or jump) limit per trajectory.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Agreement band in standard errors.
    #[arg(long, default_value_t = 3.0)]
    pub sigmas: f64,
}

#[derive(Debug, Args)]
pub struct CheckAllArgs {
    /// Model files or directories; defaults to the bundled models.
    pub paths: Vec<PathBuf>,
}

impl Command {
    pub fn file(&self) -> Option<&PathBuf> {
        match self {
            Command::Validate(a) => Some(&a.file),
            Command::Hitting(a) => Some(&a.file),
            Command::Stationary(a) => Some(&a.file),
            Command::Mhtf(a) => Some(&a.file),
            Command::Kac(a) => Some(&a.file),
            Command::Recurrence(a) => Some(&a.file),
            Command::Simulate(a) => Some(&a.file),
            Command::CheckAll(_) => None,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Input(InputError),
    Numeric(OqwError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numeric(OqwError::HypothesisViolation { .. }) => EXIT_HYPOTHESIS,
            CliError::Numeric(
                OqwError::InvalidModel(_)
                | OqwError::InvalidDensity(_)
                | OqwError::DimensionMismatch(_)
                | OqwError::NotSquare { .. }
                | OqwError::Unsupported(_),
            ) => EXIT_INPUT,
            CliError::Numeric(_) => EXIT_CHECK_FAILED,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(e) => write!(f, "input error: {e}"),
            CliError::Numeric(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<InputError> for CliError {
    fn from(e: InputError) -> Self {
        CliError::Input(e)
    }
}

impl From<OqwError> for CliError {
    fn from(e: OqwError) -> Self {
        CliError::Numeric(e)
    }
}

/// Rendered output and exit code of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub stdout: String,
    pub stderr: String,
    pub code: i32,
}

pub fn render(report: &Report, format: Format) -> String {
    match format {
        Format::Text => report.to_text(),
        Format::Csv => report.to_csv(),
    }
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> Outcome {
    let result = match cli.command.file() {
        Some(path) => LoadedModel::from_path(path)
            .map_err(CliError::from)
            .and_then(|m| commands::run(&cli.command, &m)),
        None => commands::run_without_model(&cli.command),
    };
    match result {
        Ok(report) => Outcome {
            stdout: render(&report, cli.format),
            stderr: String::new(),
            code: if report.passed() { EXIT_PASS } else { EXIT_CHECK_FAILED },
        },
        Err(e) => Outcome {
            stdout: String::new(),
            stderr: format!("oqw: {e}\n"),
            code: e.exit_code(),
        },
    }
}

/// Applies `OQW_THREADS` to the global rayon pool.
pub fn configure_threads() -> Result<(), InputError> {
    let Ok(value) = std::env::var("OQW_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| InputError::Invalid(format!("OQW_THREADS={value:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| InputError::Invalid(format!("thread pool: {e}")))
}
