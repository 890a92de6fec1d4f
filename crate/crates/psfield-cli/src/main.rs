//! Pipeline driver: stage-by-stage commands over one TOML configuration.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod out;

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Lib(psfield::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<psfield::Error> for CliError {
    fn from(e: psfield::Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(psfield::Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Lib(psfield::Error::Json(e))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use psfield::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Lib(e) => match e {
                E::NonConvergence { .. }
                | E::NotPositiveDefinite { .. }
                | E::DegeneratePolygon { .. } => 4,
                E::InvalidProjection(_) | E::Domain(_) => 2,
                _ => 3,
            },
        }
    }
}

#[derive(Parser)]
#[command(
    name = "psfield",
    about = "Model an annual pollutant field and test the monitoring network for preferential sampling",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, filter and aggregate the annual summaries into the canonical
    /// observations file.
    Ingest(CommonArgs),
    /// Per-year empirical variograms, fitted parameters and their quantiles.
    Variogram(CommonArgs),
    /// Fit the space-time model by MAP and save it as JSON.
    Fit(CommonArgs),
    /// Krige the prediction surfaces for the modeled years.
    Predict(CommonArgs),
    /// Holdout validation of the fitted model configuration.
    Validate(CommonArgs),
    /// Preferential-sampling test per year, with series diagnostics.
    Pstest(CommonArgs),
    /// Combined human-readable report over all stage outputs.
    Report(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to the TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    let (args, runner): (&CommonArgs, fn(&RunConfig, &config::ResolvedPaths) -> Result<(), CliError>) =
        match &cli.command {
            Command::Ingest(a) => (a, commands::ingest::run),
            Command::Variogram(a) => (a, commands::variogram::run),
            Command::Fit(a) => (a, commands::fit::run),
            Command::Predict(a) => (a, commands::predict::run),
            Command::Validate(a) => (a, commands::validate::run),
            Command::Pstest(a) => (a, commands::pstest::run),
            Command::Report(a) => (a, commands::report::run),
        };
    let cfg = RunConfig::load(&args.config)?;
    let paths = cfg.resolved(&args.config);
    std::fs::create_dir_all(&paths.output_dir)?;
    runner(&cfg, &paths)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
