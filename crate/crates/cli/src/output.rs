//! Artifact writing: CSV files headed by the run configuration and its hash,
//! with optional JSON mirrors.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Validated configuration of one run, echoed into every artifact.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub command: &'static str,
    pub version: &'static str,
    pub model_sha256: Option<String>,
    pub args: Value,
}

impl RunConfig {
    pub fn new(command: &'static str, model_sha256: Option<String>, args: &impl Serialize) -> Self {
        RunConfig {
            command,
            version: env!("CARGO_PKG_VERSION"),
            model_sha256,
            args: serde_json::to_value(args).expect("arguments serialize"),
        }
    }

    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }
}

/// Column-labelled rows. `Null` cells become empty CSV fields.
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Table {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// `f64` as a JSON value; non-finite values become `null`.
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

pub fn opt_num(x: Option<f64>) -> Value {
    x.map(num).unwrap_or(Value::Null)
}

/// Output directory plus the configuration every artifact is stamped with.
pub struct Sink {
    pub dir: Option<PathBuf>,
    pub json: bool,
    pub config: RunConfig,
    pub header: Vec<String>,
    pub written: Vec<PathBuf>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("cannot write {}: {e}", path.display()))
}

impl Sink {
    pub fn new(dir: Option<PathBuf>, json: bool, config: RunConfig) -> Result<Self, CliError> {
        if let Some(d) = &dir {
            fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
        }
        Ok(Sink {
            dir,
            json,
            config,
            header: Vec::new(),
            written: Vec::new(),
        })
    }

    /// Extra `# key: value` line placed in every CSV header after the config.
    pub fn note(&mut self, line: impl Into<String>) {
        self.header.push(line.into());
    }

    fn path(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name))
    }

    /// Render a CSV body preceded by `#` comment lines.
    pub fn render_csv(&self, table: &Table) -> Result<String, CliError> {
        let mut out = String::new();
        out.push_str(&format!(
            "# preview-gain {} {}\n",
            self.config.version, self.config.command
        ));
        out.push_str(&format!("# config: {}\n", self.config.canonical()));
        out.push_str(&format!("# config_hash: {}\n", self.config.hash()));
        for line in &self.header {
            out.push_str(&format!("# {line}\n"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::Input(format!("csv: {e}"));
        w.write_record(&table.columns).map_err(csv_err)?;
        for row in &table.rows {
            w.write_record(row.iter().map(cell)).map_err(csv_err)?;
        }
        let body = w
            .into_inner()
            .map_err(|e| CliError::Input(format!("csv: {e}")))?;
        out.push_str(&String::from_utf8(body).expect("csv output is UTF-8"));
        Ok(out)
    }

    /// Write `name.csv`, plus `name.json` with the same rows under `--json`.
    pub fn table(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        let Some(path) = self.path(&format!("{name}.csv")) else {
            return Ok(());
        };
        let text = self.render_csv(table)?;
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        self.written.push(path);
        if self.json {
            let rows: Vec<Value> = table
                .rows
                .iter()
                .map(|r| {
                    Value::Object(
                        table
                            .columns
                            .iter()
                            .cloned()
                            .zip(r.iter().cloned())
                            .collect(),
                    )
                })
                .collect();
            let doc = json!({
                "config": self.config,
                "config_hash": self.config.hash(),
                "notes": self.header,
                "rows": rows,
            });
            self.document(&format!("{name}.json"), &doc)?;
        }
        Ok(())
    }

    /// Write a JSON document as is.
    pub fn document(&mut self, file: &str, value: &impl Serialize) -> Result<(), CliError> {
        let Some(path) = self.path(file) else {
            return Ok(());
        };
        let text = serde_json::to_string_pretty(value).map_err(|e| io_err(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    /// JSON document wrapped with the config and its hash.
    pub fn stamped(
        &mut self,
        file: &str,
        key: &str,
        value: &impl Serialize,
    ) -> Result<(), CliError> {
        let doc = json!({ "config": self.config, "config_hash": self.config.hash(), key: value });
        self.document(file, &doc)
    }
}
