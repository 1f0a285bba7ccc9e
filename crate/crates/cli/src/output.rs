//! CSV tables with a `#`-prefixed manifest header, plus a TOML sidecar
//! carrying the wall-clock timestamps.
//!
//! Timestamps stay out of the CSV so that the same config and seed always
//! produce byte-identical tables.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Provenance of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub rate_model: String,
    pub outputs: Vec<String>,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
}

impl RunManifest {
    pub fn new(command: &str, config_sha256: String, seed: u64, rate_model: String) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_sha256,
            seed,
            rate_model,
            outputs: Vec::new(),
            started: now(),
            finished: 0.0,
        }
    }

    fn header(&self, output: &str) -> String {
        format!(
            "# tool: {} {}\n# command: {}\n# config_sha256: {}\n# seed: {}\n# rate_model: {}\n# output: {output}\n",
            self.tool, self.version, self.command, self.config_sha256, self.seed, self.rate_model
        )
    }
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// A CSV table held in memory until the command has succeeded.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file_name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(file_name: impl Into<String>, columns: &[&'static str]) -> Self {
        Table {
            file_name: file_name.into(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn render(&self, manifest: &RunManifest) -> Vec<u8> {
        let mut out = manifest.header(&self.file_name).into_bytes();
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        w.flush().expect("in-memory write");
        drop(w);
        out
    }
}

/// Shortest representation that parses back to the same value.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Writes the tables into `dir`, plus a sidecar manifest named after the
/// first table.
pub fn write_all(
    dir: &Path,
    tables: &[Table],
    mut manifest: RunManifest,
) -> CliResult<Vec<PathBuf>> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| CliError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    manifest.outputs = tables.iter().map(|t| t.file_name.clone()).collect();
    let mut written = Vec::new();
    for t in tables {
        let path = dir.join(&t.file_name);
        std::fs::write(&path, t.render(&manifest)).map_err(io(&path))?;
        written.push(path);
    }
    manifest.finished = now();
    let stem = tables
        .first()
        .and_then(|t| Path::new(&t.file_name).file_stem())
        .map_or_else(
            || manifest.command.clone(),
            |s| s.to_string_lossy().into_owned(),
        );
    let path = dir.join(format!("{stem}.manifest.toml"));
    let text = toml::to_string(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(io(&path))?;
    written.push(path);
    Ok(written)
}
