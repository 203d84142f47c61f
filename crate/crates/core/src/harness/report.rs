use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{PoolingMode, RunConfig};
use super::HarnessError;
use crate::classifier::ConfusionMatrix;
use crate::metrics::{AccuracyMatrix, DomainMetrics};
use crate::scenario::ScenarioKind;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub config_name: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub num_tasks: usize,
    pub total_classes: usize,
    pub step_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSummary {
    pub pooling: PoolingMode,
    pub num_prompts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_prompts: Option<Vec<usize>>,
    pub temperature: f64,
    pub source_model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub seen_classes: usize,
    pub num_test: u64,
    pub correct: u64,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top5_accuracy: Option<f64>,
    /// Row of the accuracy matrix: accuracy on each scenario domain after this step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_accuracies: Option<Vec<f64>>,
    pub confusion: ConfusionMatrix,
}

/// Accuracy-matrix view of a domain-incremental run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSummary {
    /// Column order of the matrix.
    pub domain_ids: Vec<u32>,
    pub matrix: AccuracyMatrix,
    /// Present when the matrix has at least two domains. `forward` averages
    /// every `r[i][j]` with `j > i`, next-domain entries included.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<DomainMetrics>,
    pub in_domain: f64,
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub avg: f64,
    pub last: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_top5: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_top5: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub scenario: ScenarioSummary,
    pub head: HeadSummary,
    pub steps: Vec<StepRecord>,
    pub summary: Summary,
    pub inputs: Vec<InputDigest>,
    pub duration_secs: f64,
}

impl EvalReport {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::SchemaViolation(m));
        if self.schema_version != REPORT_SCHEMA_VERSION {
            return bad(format!("unsupported schema version {}", self.schema_version));
        }
        if self.steps.len() != self.scenario.num_tasks {
            return bad(format!(
                "{} step records for {} tasks",
                self.steps.len(),
                self.scenario.num_tasks
            ));
        }
        let mut prev_seen = 0;
        for (i, s) in self.steps.iter().enumerate() {
            if s.step != i {
                return bad(format!("step record {i} is labelled {}", s.step));
            }
            if !s.confusion.is_square() || s.confusion.size() != s.seen_classes {
                return bad(format!(
                    "step {i}: confusion is {}x{} for {} seen classes",
                    s.confusion.counts.len(),
                    s.confusion.size(),
                    s.seen_classes
                ));
            }
            if s.confusion.total() != s.num_test || s.confusion.trace() != s.correct {
                return bad(format!("step {i}: confusion counts disagree with totals"));
            }
            if !(0.0..=1.0).contains(&s.accuracy) {
                return bad(format!("step {i}: accuracy {} outside [0, 1]", s.accuracy));
            }
            if s.seen_classes < prev_seen {
                return bad(format!("step {i}: seen-class count decreased"));
            }
            prev_seen = s.seen_classes;
        }
        if prev_seen != self.scenario.total_classes {
            return bad(format!(
                "final seen-class count {prev_seen} != {} classes",
                self.scenario.total_classes
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// The report with run-to-run varying fields zeroed, for replay comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            duration_secs: 0.0,
            ..self.clone()
        }
    }
}

pub fn parse_report(text: &str) -> Result<EvalReport, HarnessError> {
    let report: EvalReport = serde_json::from_str(text)
        .map_err(|e| HarnessError::SchemaViolation(format!("malformed report: {e}")))?;
    report.validate()?;
    Ok(report)
}

/// `<dir>/<stem>.step003.confusion.csv` for step 3 of report `<dir>/<stem>.json`.
pub fn confusion_csv_path(report_path: &Path, step: usize) -> PathBuf {
    let stem = report_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    report_path.with_file_name(format!("{stem}.step{step:03}.confusion.csv"))
}

/// Writes the report as JSON and, if asked, one confusion CSV per step.
/// Returns every path written.
pub fn emit_report(
    report: &EvalReport,
    path: &Path,
    confusion_csv: bool,
) -> Result<Vec<PathBuf>, HarnessError> {
    report.validate()?;
    let write = |p: &Path, text: &str| {
        fs::write(p, text).map_err(|e| HarnessError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        })
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
    }
    write(path, &report.to_json())?;
    let mut written = vec![path.to_path_buf()];
    if confusion_csv {
        for s in &report.steps {
            let p = confusion_csv_path(path, s.step);
            write(&p, &s.confusion.to_csv())?;
            written.push(p);
        }
    }
    Ok(written)
}
