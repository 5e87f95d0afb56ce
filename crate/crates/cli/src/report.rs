//! Run reports: metrics with units, artifact paths and error records.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

/// Outcome of one command. `metrics.json` holds everything except the wall
/// time so reruns with the same scenario and seed compare byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub scenario: Option<String>,
    pub seed: u64,
    pub metrics: BTreeMap<String, Metric>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<ErrorRecord>,
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Serialize)]
struct Timed<'a> {
    #[serde(flatten)]
    report: &'a RunReport,
    wall_time_s: f64,
}

pub const METRICS_FILE: &str = "metrics.json";
pub const REPORT_FILE: &str = "report.json";

impl RunReport {
    pub fn new(command: impl Into<String>, scenario: Option<&Path>, seed: u64) -> Self {
        Self {
            command: command.into(),
            scenario: scenario.map(|p| p.display().to_string()),
            seed,
            metrics: BTreeMap::new(),
            artifacts: Vec::new(),
            errors: Vec::new(),
            wall_time: 0.0,
        }
    }

    pub fn metric(&mut self, name: &str, value: f64, unit: &str) -> &mut Self {
        self.metrics.insert(
            name.to_string(),
            Metric {
                value,
                unit: unit.to_string(),
            },
        );
        self
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).map(|m| m.value)
    }

    pub fn artifact(&mut self, rel: impl Into<String>) {
        self.artifacts.push(rel.into());
    }

    pub fn error(&mut self, kind: &str, message: impl Into<String>) {
        self.errors.push(ErrorRecord {
            kind: kind.to_string(),
            message: message.into(),
        });
    }

    pub fn ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn metrics_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `metrics.json` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let metrics = dir.join(METRICS_FILE);
        fs::write(&metrics, self.metrics_json())?;
        let timed = Timed {
            report: self,
            wall_time_s: self.wall_time,
        };
        let report = dir.join(REPORT_FILE);
        fs::write(
            &report,
            serde_json::to_string_pretty(&timed).expect("report serializes"),
        )?;
        Ok((metrics, report))
    }
}
