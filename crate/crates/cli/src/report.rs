use std::path::Path;
use std::time::Instant;

use caloric_core::io;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub anchor: String,
    pub value: f64,
    pub threshold: f64,
    pub comparison: Comparison,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderRow {
    pub n: usize,
    pub h: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderTable {
    pub check: String,
    pub rows: Vec<OrderRow>,
    pub order: f64,
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub config: ExperimentConfig,
    pub checks: Vec<Check>,
    pub timings: Vec<Timing>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence: Option<OrderTable>,
    pub pass: bool,
}

impl RunReport {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            schema_version: crate::config::SCHEMA_VERSION,
            command: command.to_string(),
            config: config.clone(),
            checks: Vec::new(),
            timings: Vec::new(),
            convergence: None,
            pass: true,
        }
    }

    /// Records `value <= threshold`. NaN fails.
    pub fn at_most(&mut self, name: &str, anchor: &str, value: f64, threshold: f64) {
        self.push(name, anchor, value, threshold, Comparison::AtMost, value <= threshold);
    }

    pub fn at_least(&mut self, name: &str, anchor: &str, value: f64, threshold: f64) {
        self.push(name, anchor, value, threshold, Comparison::AtLeast, value >= threshold);
    }

    fn push(&mut self, name: &str, anchor: &str, value: f64, threshold: f64, comparison: Comparison, pass: bool) {
        assert!(!anchor.is_empty(), "check {name} has no anchor");
        self.pass &= pass;
        self.checks.push(Check {
            name: name.to_string(),
            anchor: anchor.to_string(),
            value,
            threshold,
            comparison,
            pass,
        });
    }

    /// Runs `f` and records its wall time under `stage`.
    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.timings.push(Timing {
            stage: stage.to_string(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn absorb(&mut self, other: RunReport) {
        self.pass &= other.pass;
        self.checks.extend(other.checks);
        self.timings.extend(other.timings);
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        io::write_json_atomic(&dir.join("report.json"), self)?;
        Ok(())
    }
}

/// CSV accumulated in memory and written atomically.
pub struct Csv {
    inner: csv::Writer<Vec<u8>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut inner = csv::Writer::from_writer(Vec::new());
        inner.write_record(header).expect("in-memory write");
        Self { inner }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields).expect("in-memory write");
    }

    pub fn write(self, path: &Path) -> Result<(), CliError> {
        let bytes = self.inner.into_inner().map_err(|e| CliError::Compute(e.to_string()))?;
        io::write_atomic(path, &bytes)?;
        Ok(())
    }
}

/// Wave diagnostics share one row shape: `t, s, quantity, value`.
pub fn wave_csv() -> Csv {
    Csv::new(&["t", "s", "quantity", "value"])
}

pub fn num(x: f64) -> String {
    format!("{x:e}")
}
