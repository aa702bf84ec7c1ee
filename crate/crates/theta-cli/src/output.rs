//! Document rendering. Each command builds both a JSON value and a CSV
//! table; --output picks which one is written.

use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(format!("unknown output format {other:?}")),
        }
    }
}

/// A CSV table with a fixed header.
pub struct Csv {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

pub struct CommandOutput {
    pub json: Value,
    pub csv: Csv,
}

impl CommandOutput {
    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Json => {
                let mut text =
                    serde_json::to_string_pretty(&self.json).expect("serializable value");
                text.push('\n');
                text
            }
            OutputFormat::Csv => {
                let mut text = self.csv.header.join(",");
                text.push('\n');
                for row in &self.csv.rows {
                    debug_assert_eq!(row.len(), self.csv.header.len());
                    text.push_str(&row.join(","));
                    text.push('\n');
                }
                text
            }
        }
    }
}

/// Shortest decimal text that round-trips the float, so identical runs
/// render byte-identically.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn write_payload(out: Option<&PathBuf>, payload: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, payload)
            .map_err(|e| CliError::new("io", format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(payload.as_bytes())
            .map_err(|e| CliError::new("io", format!("cannot write stdout: {e}"))),
    }
}
