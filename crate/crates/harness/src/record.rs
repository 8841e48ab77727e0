use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ScenarioConfig;
use crate::error::{EXIT_BUDGET, EXIT_OK, EXIT_SOLVER};

pub const RECORD_SCHEMA: &str = "hierctl.run-record";
pub const RECORD_SCHEMA_VERSION: u32 = 1;
pub const TABLE_SCHEMA_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// A numeric table written as one CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width of table {}",
            self.name
        );
        self.rows.push(row);
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    SolverFailure,
    BudgetViolation,
}

impl RunStatus {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Ok => EXIT_OK,
            Self::SolverFailure => EXIT_SOLVER,
            Self::BudgetViolation => EXIT_BUDGET,
        }
    }
}

/// What an experiment produced, before anything touches the disk.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub status: RunStatus,
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub tables: Vec<Table>,
}

impl Outcome {
    pub fn new() -> Self {
        Self {
            status: RunStatus::Ok,
            metrics: BTreeMap::new(),
            notes: Vec::new(),
            tables: Vec::new(),
        }
    }

    pub fn metric(&mut self, key: &str, value: f64) {
        self.metrics.insert(key.to_string(), value);
    }

    pub fn flag(&mut self, key: &str, value: bool) {
        self.metric(key, if value { 1.0 } else { 0.0 });
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

impl Default for Outcome {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub schema: String,
    pub rows: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: String,
    pub schema_version: u32,
    pub tool_version: String,
    pub name: String,
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub deterministic: bool,
    pub status: RunStatus,
    pub metrics: BTreeMap<String, Option<f64>>,
    pub notes: Vec<String>,
    pub files: Vec<FileEntry>,
    pub config: ScenarioConfig,
    /// Wall-clock seconds per phase; excluded from `record_hash`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub timings: BTreeMap<String, f64>,
    pub record_hash: String,
}

impl RunRecord {
    /// sha256 of the record without timings and without the hash itself.
    pub fn compute_hash(&self) -> String {
        let mut r = self.clone();
        r.timings.clear();
        r.record_hash.clear();
        sha256_hex(
            serde_json::to_string(&r)
                .expect("record serializes")
                .as_bytes(),
        )
    }

    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied().flatten()
    }
}

pub fn config_hash(cfg: &ScenarioConfig) -> String {
    sha256_hex(cfg.canonical_json().as_bytes())
}
