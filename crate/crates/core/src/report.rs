//! Run reports: one JSON document plus plot-ready CSV tables.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Verdict of a run, mapped onto the process exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outcome {
    Pass,
    Fail,
    Inconclusive,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::Fail => 1,
            Outcome::Inconclusive => 2,
        }
    }
}

/// A CSV table. Cells are preformatted strings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// `(k, count)` histogram, one row per distinct `k`.
    pub fn k_frequency(name: &str, freq: &[(usize, usize)]) -> Self {
        let mut t = Self::new(name, &["k", "count"]);
        for (k, c) in freq {
            t.push(vec![k.to_string(), c.to_string()]);
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub command: String,
    pub seed: u64,
    pub outcome: Outcome,
    /// Command-specific results.
    pub result: Value,
    pub tables: Vec<Table>,
    /// Extra files written next to the report, e.g. trained weights.
    pub artifacts: Vec<(String, String)>,
}

impl Report {
    pub fn new(command: &str, seed: u64, outcome: Outcome, result: Value) -> Self {
        Self {
            command: command.to_string(),
            seed,
            outcome,
            result,
            tables: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    /// The JSON document. Keys are sorted; `timestamp` is the only field
    /// that depends on when the run happened, apart from wall-clock timings.
    pub fn to_json(&self, timestamp: Option<u64>) -> Value {
        let mut m = serde_json::Map::new();
        m.insert("command".into(), Value::from(self.command.clone()));
        m.insert("seed".into(), Value::from(self.seed));
        m.insert("outcome".into(), serde_json::to_value(self.outcome).unwrap());
        m.insert("result".into(), self.result.clone());
        if let Some(t) = timestamp {
            m.insert("timestamp".into(), Value::from(t));
        }
        Value::Object(m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Both,
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<PathBuf> {
    std::fs::write(&path, bytes).map_err(|e| io(&path, e))?;
    Ok(path)
}

/// Writes `report.json` and/or one `<table>.csv` per table into `dir`,
/// plus every artifact. Returns the paths written, in order.
pub fn emit_report(report: &Report, dir: &Path, format: Format) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut written = Vec::new();
    if format != Format::Csv {
        let ts = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut text = serde_json::to_string_pretty(&report.to_json(Some(ts)))?;
        text.push('\n');
        written.push(write(dir.join("report.json"), text.as_bytes())?);
    }
    if format != Format::Json {
        for t in &report.tables {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&t.header)?;
            for r in &t.rows {
                w.write_record(r)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            written.push(write(dir.join(format!("{}.csv", t.name)), &bytes)?);
        }
    }
    for (name, content) in &report.artifacts {
        written.push(write(dir.join(name), content.as_bytes())?);
    }
    Ok(written)
}

/// Wall-clock fields, dropped when comparing runs.
pub fn is_timing_key(k: &str) -> bool {
    k == "timestamp" || k.ends_with("time_s") || k.starts_with("runtime_")
}

/// Removes timing fields at any depth.
pub fn strip_timing(v: &Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(
            m.iter()
                .filter(|(k, _)| !is_timing_key(k))
                .map(|(k, v)| (k.clone(), strip_timing(v)))
                .collect(),
        ),
        Value::Array(a) => Value::Array(a.iter().map(strip_timing).collect()),
        _ => v.clone(),
    }
}

pub fn fmt_f64(x: f64) -> String {
    x.to_string()
}

pub fn fmt_opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}
