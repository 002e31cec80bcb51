//! Report envelopes and their JSON and CSV writers.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::config::SCHEMA_VERSION;
use crate::error::LabError;

/// A command's result together with the exact config and seed behind it.
#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Report<'a, C, R> {
    pub schema_version: u32,
    pub command: &'a str,
    pub seed: Option<u64>,
    pub config: &'a C,
    pub result: &'a R,
}

impl<'a, C: Serialize, R: Serialize> Report<'a, C, R> {
    pub fn new(command: &'a str, seed: Option<u64>, config: &'a C, result: &'a R) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command,
            seed,
            config,
            result,
        }
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), LabError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| LabError::Data(e.to_string()))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(LabError::io(path))
}

/// A flat table, written as CSV with a header row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<(), LabError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| LabError::Data(format!("{}: {e}", path.display())))?;
        let csv_err = |e: csv::Error| LabError::Data(format!("{}: {e}", path.display()));
        w.write_record(&self.header).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row).map_err(csv_err)?;
        }
        w.flush().map_err(LabError::io(path))
    }
}

/// Formats a float so that it parses back to the same value.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
