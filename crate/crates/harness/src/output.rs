use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::{ExperimentKind, ScenarioConfig};
use crate::error::HarnessError;
use crate::record::{
    config_hash, sha256_hex, FileEntry, Outcome, RunRecord, Table, RECORD_SCHEMA,
    RECORD_SCHEMA_VERSION, TABLE_SCHEMA_VERSION,
};

pub const RECORD_FILE: &str = "record.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub seed: u64,
    pub threads: usize,
    /// Drop wall-clock timings so that repeated runs give identical files.
    pub deterministic: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 1,
            deterministic: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Run {
    pub config: ScenarioConfig,
    pub options: RunOptions,
    pub outcome: Outcome,
    pub timings: BTreeMap<String, f64>,
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn render_csv(table: &Table) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&table.columns).expect("in-memory write");
    for row in &table.rows {
        w.write_record(row.iter().map(|v| format_value(*v)))
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// The CSV bundle of a run: file name and contents, in output order.
pub fn emit_plot_data(outcome: &Outcome) -> Vec<(String, Vec<u8>)> {
    outcome
        .tables
        .iter()
        .map(|t| (t.file_name(), render_csv(t)))
        .collect()
}

impl Run {
    fn files(&self) -> Vec<(String, String, usize, Vec<u8>)> {
        let mut out = vec![(
            CONFIG_FILE.to_string(),
            "hierctl.config/1".to_string(),
            0,
            self.config.to_toml().into_bytes(),
        )];
        for t in &self.outcome.tables {
            out.push((
                t.file_name(),
                format!("hierctl.{}/{}", t.name, TABLE_SCHEMA_VERSION),
                t.rows.len(),
                render_csv(t),
            ));
        }
        out
    }

    pub fn record(&self) -> RunRecord {
        let files = self
            .files()
            .into_iter()
            .map(|(name, schema, rows, bytes)| FileEntry {
                name,
                schema,
                rows,
                sha256: sha256_hex(&bytes),
            })
            .collect();
        let mut r = RunRecord {
            schema: RECORD_SCHEMA.to_string(),
            schema_version: RECORD_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            name: self.config.name.clone(),
            kind: self.config.kind.as_str().to_string(),
            config_hash: config_hash(&self.config),
            seed: self.options.seed,
            deterministic: self.options.deterministic,
            status: self.outcome.status,
            metrics: self
                .outcome
                .metrics
                .iter()
                .map(|(k, v)| (k.clone(), v.is_finite().then_some(*v)))
                .collect(),
            notes: self.outcome.notes.clone(),
            files,
            config: self.config.clone(),
            timings: if self.options.deterministic {
                BTreeMap::new()
            } else {
                self.timings.clone()
            },
            record_hash: String::new(),
        };
        r.record_hash = r.compute_hash();
        r
    }

    /// Writes the config, the CSV tables and `record.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<RunRecord, HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        for (name, _, _, bytes) in self.files() {
            let path = dir.join(&name);
            fs::write(&path, bytes).map_err(|e| HarnessError::io(path, e))?;
        }
        let record = self.record();
        let path = dir.join(RECORD_FILE);
        let json = serde_json::to_string_pretty(&record).expect("record serializes");
        fs::write(&path, json + "\n").map_err(|e| HarnessError::io(path, e))?;
        Ok(record)
    }
}

fn headline(kind: ExperimentKind) -> &'static [(&'static str, &'static str)] {
    match kind {
        ExperimentKind::Forward => &[
            ("‖y0‖", "initial_norm"),
            ("‖y(T)‖", "terminal_norm"),
            ("max |y|", "max_abs"),
        ],
        ExperimentKind::Nash => &[
            ("Nash sweeps", "nash_sweeps"),
            ("equilibrium residual 1", "equilibrium_residual_1"),
            ("equilibrium residual 2", "equilibrium_residual_2"),
            ("gradient FD error", "gradient_fd_error"),
            ("convexity margin 1", "convexity_margin_1"),
        ],
        ExperimentKind::Convexity => &[("μ*", "mu_star"), ("trials", "trials")],
        ExperimentKind::Observability => &[
            ("max ratio", "max_ratio"),
            ("max ratio (refined)", "max_ratio_refined"),
            ("relative change", "ratio_change"),
        ],
        ExperimentKind::LinearControl => &[
            ("‖y(T)‖", "terminal_norm"),
            ("‖y(T)‖/‖y0‖", "relative_terminal"),
            ("budget", "budget_total"),
            ("κ₀", "kappa0"),
            ("C = budget/κ₀", "budget_constant"),
        ],
        ExperimentKind::NonlinearControl => &[
            ("‖y(T)‖", "terminal_norm"),
            ("Newton iterations", "newton_iterations"),
            ("converged", "converged"),
            ("radius ‖y0‖_H¹a", "radius"),
        ],
        ExperimentKind::Diagnostics => &[
            ("λ", "lambda"),
            ("s", "s"),
            ("ζ₀", "zeta0"),
            ("identity mismatch", "identity_mismatch"),
        ],
        ExperimentKind::Mms => &[("space order", "space_order"), ("time order", "time_order")],
    }
}

fn show(v: Option<f64>) -> String {
    match v {
        Some(v) if v.fract() == 0.0 && v.abs() < 1e9 => format!("{v}"),
        Some(v) => format!("{v:.6e}"),
        None => "n/a".into(),
    }
}

/// One-screen report of a finished run.
pub fn summary(record: &RunRecord) -> String {
    let mut s = String::new();
    let kind = record.config.kind;
    let name = if record.name.is_empty() {
        &record.kind
    } else {
        &record.name
    };
    let _ = writeln!(s, "{name} [{}] status: {:?}", record.kind, record.status);
    let _ = writeln!(
        s,
        "config {}  seed {}",
        &record.config_hash[..16],
        record.seed
    );
    for (label, key) in headline(kind) {
        if record.metrics.contains_key(*key) {
            let _ = writeln!(s, "  {label:<26} {}", show(record.metric(key)));
        }
    }
    let shown: Vec<&str> = headline(kind).iter().map(|(_, k)| *k).collect();
    let rest: Vec<_> = record
        .metrics
        .keys()
        .filter(|k| !shown.contains(&k.as_str()))
        .collect();
    if !rest.is_empty() {
        let _ = writeln!(s, "other metrics:");
        for k in rest.iter().take(24) {
            let _ = writeln!(s, "  {k:<26} {}", show(record.metric(k)));
        }
        if rest.len() > 24 {
            let _ = writeln!(s, "  ... {} more in {RECORD_FILE}", rest.len() - 24);
        }
    }
    for n in &record.notes {
        let _ = writeln!(s, "note: {n}");
    }
    if !record.timings.is_empty() {
        let total: f64 = record.timings.values().sum();
        let _ = writeln!(s, "time {total:.2} s");
    }
    let names: Vec<&str> = record.files.iter().map(|f| f.name.as_str()).collect();
    let _ = writeln!(s, "files: {}", names.join(", "));
    let _ = writeln!(s, "record {}", record.record_hash);
    s
}
