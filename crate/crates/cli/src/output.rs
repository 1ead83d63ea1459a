//! Atomic artifact writers: CSV with `# key=value` headers, or JSON.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::args::Format;
use crate::CliError;

/// Writes `bytes` to `dir/name` through a temporary file in the same
/// directory, renamed into place.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)?;
    let target = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(&target).map_err(|e| CliError::Io(e.error))?;
    Ok(target)
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    write_atomic(dir, name, text.as_bytes())
}

/// A numeric table with self-describing metadata.
#[derive(Clone, Debug, Serialize)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            meta: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut out = Vec::new();
        for (k, v) in &self.meta {
            writeln!(out, "# {k}={v}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| csv_number(*v))).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.into_error()))
    }

    fn to_json(&self) -> serde_json::Value {
        let meta: serde_json::Map<String, serde_json::Value> = self
            .meta
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
            .collect();
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| r.iter().map(|v| json_number(*v)).collect())
            .collect();
        serde_json::json!({ "meta": meta, "columns": self.columns, "rows": rows })
    }

    /// Writes `dir/stem.csv` or `dir/stem.json`.
    pub fn write(&self, dir: &Path, stem: &str, format: Format) -> Result<PathBuf, CliError> {
        match format {
            Format::Csv => write_atomic(dir, &format!("{stem}.csv"), &self.to_csv()?),
            Format::Json => write_json(dir, &format!("{stem}.json"), &self.to_json()),
        }
    }
}

/// JSON has no non-finite numbers; they become strings.
pub fn json_number(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::Value::from(v)
    } else {
        serde_json::Value::String(v.to_string())
    }
}

/// Shortest round-trip form; integral values without a fractional part.
fn csv_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e.to_string()))
}
