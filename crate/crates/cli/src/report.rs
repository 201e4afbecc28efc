//! CSV tables and JSON summaries.
//!
//! Floats are written in scientific notation with 17 significant digits so
//! that every `f64` round-trips. Timing goes to the JSON summary only, which
//! keeps the CSV byte-identical between reruns.

use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    headers: &'static [&'static str],
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(headers: &'static [&'static str]) -> Self {
        Self {
            headers,
            rows: Vec::new(),
        }
    }

    /// Append a row; every float must be finite.
    pub fn push(&mut self, row: Vec<Cell>) -> Result<(), CliError> {
        assert_eq!(row.len(), self.headers.len(), "row width differs from header");
        for (h, c) in self.headers.iter().zip(&row) {
            if let Cell::Float(v) = c {
                if !v.is_finite() {
                    return Err(CliError::Numerical(format!("non-finite value in column `{h}`")));
                }
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
        w.write_record(self.headers).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))
    }
}

/// Everything a campaign produces besides its CSV rows.
#[derive(Debug, Clone)]
pub struct Summary {
    pub results: Value,
    pub criteria: Value,
}

#[allow(clippy::too_many_arguments)]
pub fn write_summary(
    path: &Path,
    subcommand: &str,
    seed: u64,
    workers: usize,
    parameters: Value,
    summary: &Summary,
    rows: usize,
    seconds: f64,
) -> Result<(), CliError> {
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "subcommand": subcommand,
        "seed": seed,
        "workers": workers,
        "parameters": parameters,
        "rows": rows,
        "results": summary.results,
        "criteria": summary.criteria,
        "wall_clock_seconds": seconds,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
