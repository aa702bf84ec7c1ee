//! `theta`: digit expansions over Q(sqrt(m)), invariant-measure calculus,
//! transfer-operator numerics, and Monte Carlo digit-sum experiments.
//!
//! Every invocation produces a single document, as JSON (default) or CSV.
//! Errors print a one-line JSON object to stderr and exit with status 1;
//! flag misuse is reported by the parser with status 2.

mod commands;
mod input;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::input::FileConfig;
use crate::output::OutputFormat;

/// Theta-expansion toolbox.
#[derive(Parser)]
#[command(name = "theta", version)]
struct Cli {
    /// Output format: json or csv
    #[arg(long, global = true, value_enum)]
    output: Option<OutputFormat>,

    /// Write the document to this file instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// key=value file consulted for any flag left unset; flags win
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker thread count (or set THETA_THREADS); results never depend on it
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: commands::Command,
}

/// A failure after successful flag parsing: bad input values, domain
/// violations, numeric trouble, or I/O. Rendered as machine-readable JSON
/// on stderr.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError { kind, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        CliError::new("usage", message)
    }
}

impl From<theta_core::expansion::ExpansionError> for CliError {
    fn from(e: theta_core::expansion::ExpansionError) -> Self {
        CliError::new("expansion", e.to_string())
    }
}

impl From<theta_core::qfield::QFieldError> for CliError {
    fn from(e: theta_core::qfield::QFieldError) -> Self {
        CliError::new("field", e.to_string())
    }
}

impl From<theta_core::montecarlo::ExperimentError> for CliError {
    fn from(e: theta_core::montecarlo::ExperimentError) -> Self {
        CliError::new("experiment", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::new("serialize", e.to_string())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    let threads = cfg
        .opt(cli.threads, "threads")?
        .or_else(|| std::env::var("THETA_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(threads) = threads {
        // an already-installed global pool is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let format = cfg.or_default(cli.output, "output", OutputFormat::Json)?;
    let rendered = commands::dispatch(cli.command, &cfg)?.render(format);
    output::write_payload(cli.out.as_ref(), &rendered)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let report = serde_json::json!({
                "error": true,
                "kind": err.kind,
                "message": err.message,
            });
            eprintln!("{report}");
            ExitCode::from(1)
        }
    }
}
