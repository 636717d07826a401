//! `mediaflow`: stage-by-stage command line over file artifacts.

mod commands;
mod config;
mod stage;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mediaflow::interactions::Scheme;
use serde::Serialize;

use config::{Config, Overrides};

#[derive(Parser)]
#[command(
    name = "mediaflow",
    version,
    about = "Media consumption analysis over tweet streams"
)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, default_value = "mediaflow.toml")]
    config: PathBuf,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// occurrence, country or weighted (also 1, 2, 3).
    #[arg(long, global = true)]
    scheme: Option<Scheme>,
    /// Run directory; overrides `paths.output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Parse the tweet stream and estimate the sampling rate.
    Ingest,
    /// Resolve each user's profile location.
    Geoparse,
    /// Extract interactions and build the interaction matrices.
    Matrix,
    /// Cluster consumption vectors, with metric curves and stability.
    Cluster,
    /// Source/target groups and risk ratios for each configured country pair.
    Pair,
    /// Cross-validated vote-share regression.
    Regress,
    /// Collect configured analyses into one report.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Geoparse => "geoparse",
            Command::Matrix => "matrix",
            Command::Cluster => "cluster",
            Command::Pair => "pair",
            Command::Regress => "regress",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CliError {
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        CliError {
            kind: kind.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl From<mediaflow::Error> for CliError {
    fn from(e: mediaflow::Error) -> Self {
        CliError::new(e.kind(), e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("io", e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::new("csv", e.to_string())
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        workers: cli.workers,
        seed: cli.seed,
        scheme: cli.scheme,
        out: cli.out.clone(),
    };
    let cfg = Config::load(&cli.config, &overrides)?;
    let summary = match cli.command {
        Command::Ingest => commands::ingest(&cfg)?,
        Command::Geoparse => commands::geoparse(&cfg)?,
        Command::Matrix => commands::matrix(&cfg)?,
        Command::Cluster => commands::cluster(&cfg)?,
        Command::Pair => commands::pair(&cfg)?,
        Command::Regress => commands::regress(&cfg)?,
        Command::Report => commands::report(&cfg)?,
    };
    println!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({
                "error": { "stage": cli.command.name(), "kind": e.kind, "message": e.message }
            });
            eprintln!("{report}");
            ExitCode::from(2)
        }
    }
}
