use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use dirichlet_lab::refine::CsvRow;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;

/// Everything a command produces before it is written out.
#[derive(Debug, Default)]
pub struct Outcome {
    pub result: Value,
    pub checks: BTreeMap<String, bool>,
    pub table: Option<Vec<CsvRow>>,
    /// `(column name, two-column text)`.
    pub curves: Vec<(String, String)>,
}

impl Outcome {
    pub fn check(&mut self, name: &str, pass: bool) {
        self.checks.insert(name.to_string(), pass);
    }

    pub fn pass(&self) -> bool {
        self.checks.values().all(|v| *v)
    }
}

pub fn to_value<S: Serialize>(v: &S) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

pub struct Written {
    pub files: Vec<PathBuf>,
}

pub fn write(
    command: &str,
    cfg: &ExperimentConfig,
    outcome: &Outcome,
    runtime_s: f64,
    no_timestamp: bool,
) -> std::io::Result<Written> {
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let stem = command.replace('-', "_");

    if cfg.output.wants("json") {
        let mut doc = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "pass": outcome.pass(),
            "checks": outcome.checks,
            "config": to_value(cfg),
            "result": outcome.result,
            "runtime_s": if no_timestamp { 0.0 } else { runtime_s },
        });
        if !no_timestamp {
            let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            doc["generated_unix"] = json!(now);
        }
        let mut text = serde_json::to_string_pretty(&doc).expect("report serializes");
        text.push('\n');
        files.push(put(dir, &format!("{stem}.json"), text.as_bytes())?);
    }
    if let Some(rows) = outcome.table.as_ref().filter(|_| cfg.output.wants("csv")) {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row).map_err(std::io::Error::other)?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        files.push(put(dir, &format!("{stem}.csv"), &bytes)?);
    }
    if cfg.output.wants("dat") {
        for (column, text) in &outcome.curves {
            files.push(put(dir, &format!("{stem}_{column}.dat"), text.as_bytes())?);
        }
    }
    Ok(Written { files })
}

fn put(dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, bytes)?;
    Ok(path)
}
