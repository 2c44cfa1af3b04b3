//! Versioned JSON reports and CSV side tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
/// Re-computed payload values must agree with the serialized ones to this tolerance.
pub const REVALIDATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub gap: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: &str, passed: bool, gap: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self { name: name.to_string(), passed, gap, tolerance, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    /// Config as run, after seed overrides and defaults.
    pub config: serde_json::Value,
    pub passed: bool,
    pub verdicts: Vec<Verdict>,
    pub warnings: Vec<String>,
    pub payload: serde_json::Value,
    /// `(name, csv bytes)`, written next to the report.
    #[serde(skip)]
    pub tables: Vec<(String, Vec<u8>)>,
}

impl Report {
    pub fn new<C: Serialize>(command: &str, config: &C) -> Result<Self> {
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            passed: false,
            verdicts: Vec::new(),
            warnings: Vec::new(),
            payload: serde_json::Value::Object(Default::default()),
            tables: Vec::new(),
        })
    }

    pub fn add_payload<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        let v = serde_json::to_value(value)?;
        self.payload
            .as_object_mut()
            .expect("payload is an object")
            .insert(key.to_string(), v);
        Ok(())
    }

    pub fn add_table<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        self.tables.push((name.to_string(), bytes));
        Ok(())
    }

    pub fn verdict(&mut self, v: Verdict) {
        self.verdicts.push(v);
    }

    /// Overall pass: at least one verdict and all of them passed.
    pub fn finish(mut self) -> Self {
        self.passed = !self.verdicts.is_empty() && self.verdicts.iter().all(|v| v.passed);
        self
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            2
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for v in &self.verdicts {
            let tag = if v.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{tag} {}: gap={:e} tol={:e} {}", v.name, v.gap, v.tolerance, v.detail);
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        let _ = writeln!(s, "{}: {}", self.command, if self.passed { "pass" } else { "fail" });
        s
    }

    /// Paths of the side tables for a report written to `out`.
    pub fn table_path(out: &Path, name: &str) -> PathBuf {
        let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        out.with_file_name(format!("{stem}.{name}.csv"))
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        std::fs::write(out, self.to_json()?)?;
        for (name, bytes) in &self.tables {
            std::fs::write(Self::table_path(out, name), bytes)?;
        }
        Ok(())
    }
}

/// `Err(Consistency)` when a recomputed value drifts from the reported one.
pub fn revalidate(what: &str, reported: f64, recomputed: f64) -> Result<()> {
    if (reported - recomputed).abs() > REVALIDATION_TOL || reported.is_nan() != recomputed.is_nan() {
        return Err(Error::Consistency(format!(
            "{what}: reported {reported} but recomputed {recomputed}"
        )));
    }
    Ok(())
}
