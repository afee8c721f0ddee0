//! `mcpmod`: randomization-based and population-based MCP-Mod tests,
//! reference-set utilities and simulation studies.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or input data (exit code 2).
    Validation(String),
    /// Failure while computing (exit code 1).
    Runtime(String),
    /// A resource cap was exceeded (exit code 3).
    Cap(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Cap(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
            CliError::Cap(m) => write!(f, "resource cap: {m}"),
        }
    }
}

impl From<mcpmod::Error> for CliError {
    fn from(e: mcpmod::Error) -> Self {
        use mcpmod::Error as E;
        match e {
            E::EnumerationTooLarge { .. } => CliError::Cap(e.to_string()),
            E::InvalidInput(_)
            | E::DegenerateShape(_)
            | E::EmptyContrasts
            | E::DimensionMismatch(_)
            | E::Csv(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "mcpmod",
    version,
    about = "Randomization-based MCP-Mod dose-finding tests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a power / type-I error study and write CSV + JSON reports.
    Simulate(SimulateArgs),
    /// Test a trial dataset and print the outcome as JSON.
    Analyze(AnalyzeArgs),
    /// Write the optimal contrast matrix for a design as CSV.
    Contrasts(DesignArgs),
    /// Print the exact size of the randomization reference set.
    Counts(DesignArgs),
    /// Stream every sequence of the reference set with its probability.
    Enumerate(EnumerateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file (TOML) or preset name such as `scenario_49_pbd_notrend`.
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the number of simulated trials.
    #[arg(long)]
    pub sims: Option<usize>,
    #[arg(long)]
    pub n_rand: Option<usize>,
    /// Potential-outcomes table (CSV); switches to potential-outcomes mode.
    #[arg(long)]
    pub potential_outcomes: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads (default: available parallelism).
    #[arg(long, env = "MCPMOD_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Trial CSV: enrollment_index, dose, outcome, covariate_1..p.
    #[arg(long)]
    pub data: PathBuf,
    /// Design config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Methods by number (1-5) or name; defaults to the config's list or all five.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long)]
    pub n_rand: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exact p-values by full enumeration of the reference set.
    #[arg(long)]
    pub exact: bool,
    #[arg(long, default_value_t = mcpmod::randomization::DEFAULT_ENUMERATION_CAP)]
    pub cap: u64,
    #[arg(long)]
    pub add_one: bool,
    #[arg(long)]
    pub no_covariates: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = mcpmod::randomization::DEFAULT_ENUMERATION_CAP)]
    pub cap: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Contrasts(a) => commands::contrasts(&a),
        Command::Counts(a) => commands::counts(&a),
        Command::Enumerate(a) => commands::enumerate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mcpmod: {e}");
            ExitCode::from(e.code())
        }
    }
}
