//! Output artifacts and the run manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

pub const GIT_DESCRIBE: &str = env!("KAC_ISING_GIT_DESCRIBE");

/// Everything a subcommand produces.
#[derive(Debug, Default)]
pub struct Report {
    /// Main output: CSV or JSON text.
    pub primary: String,
    /// JSON written next to the main output when `--out` is given.
    pub sidecar: Option<Value>,
    /// Summary recorded in the manifest.
    pub results: Value,
    /// Named pass/fail checks evaluated on this run.
    pub checks: BTreeMap<String, bool>,
}

/// Float formatting with 17 significant digits, enough to round-trip.
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Accumulates CSV text.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv {
            text: header.join(",") + "\n",
        }
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) {
        let fields: Vec<String> = fields.into_iter().collect();
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn finish(self) -> String {
        self.text
    }
}

pub fn json_text<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable output");
    text.push('\n');
    text
}

pub fn to_value<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("serializable output")
}

/// Sidecar path: the output path with a `.json` extension, or with `.json`
/// appended when the output already is JSON.
pub fn sidecar_path(out: &Path) -> PathBuf {
    if out.extension().is_some_and(|e| e == "json") {
        let mut name = out.as_os_str().to_owned();
        name.push(".meta.json");
        PathBuf::from(name)
    } else {
        out.with_extension("json")
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes the report and returns the paths written.
pub fn write_outputs(report: &Report, out: Option<&Path>) -> Result<Vec<String>, CliError> {
    match out {
        Some(path) => {
            write_file(path, &report.primary)?;
            let mut written = vec![path.display().to_string()];
            if let Some(side) = &report.sidecar {
                let side_path = sidecar_path(path);
                write_file(&side_path, &json_text(side))?;
                written.push(side_path.display().to_string());
            }
            Ok(written)
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(report.primary.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|source| CliError::Io {
                    path: "<stdout>".to_string(),
                    source,
                })?;
            Ok(Vec::new())
        }
    }
}

/// Reproducibility record of one invocation.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub git: &'static str,
    pub subcommand: String,
    pub status: &'static str,
    pub exit_code: i32,
    pub error: Option<String>,
    pub config_file: Option<String>,
    pub out: Option<String>,
    pub params: Value,
    pub outputs: Vec<String>,
    pub checks: BTreeMap<String, bool>,
    pub results: Value,
    pub started_at_unix: f64,
    pub wall_time_s: f64,
}

pub fn emit_manifest(manifest: &Manifest, path: Option<&Path>) -> Result<(), CliError> {
    let text = json_text(manifest);
    match path {
        Some(p) => write_file(p, &text),
        None => std::io::stderr()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|source| CliError::Io {
                path: "<stderr>".to_string(),
                source,
            }),
    }
}
