use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioChoice {
    ClassIncremental,
    DomainIncremental,
    TaskFree,
}

impl std::str::FromStr for ScenarioChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "class_incremental" | "class-incremental" | "cil" => Ok(Self::ClassIncremental),
            "domain_incremental" | "domain-incremental" | "dil" => Ok(Self::DomainIncremental),
            "task_free" | "task-free" | "gaussian" => Ok(Self::TaskFree),
            other => Err(format!("unknown scenario kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    #[default]
    Embedding,
    Decision,
    DecisionTopK,
}

impl std::str::FromStr for PoolingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "embedding" => Ok(Self::Embedding),
            "decision" => Ok(Self::Decision),
            "decision_top_k" | "decision-top-k" => Ok(Self::DecisionTopK),
            other => Err(format!("unknown pooling mode {other:?}")),
        }
    }
}

/// Scenario parameters. Which fields are required depends on `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub increment: Option<usize>,
    /// Domain order; defaults to the test manifest's domain list order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domains: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_microbatches: Option<usize>,
    /// No default: task-free runs must state it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub test_embeddings: PathBuf,
    pub text_embeddings: PathBuf,
    /// Training split; only the labels are used, to lay out task-free streams.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_embeddings: Option<PathBuf>,
    /// Split used to rank prompts for `decision_top_k`. Never defaults to the test split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_embeddings: Option<PathBuf>,
    /// One class id per line; overrides the seeded class order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_order: Option<PathBuf>,
}

fn default_name() -> String {
    "run".into()
}

fn default_temperature() -> f64 {
    1.0
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub scenario: ScenarioConfig,
    pub paths: DataPaths,
    #[serde(default)]
    pub pooling: PoolingMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub seed: u64,
    /// Operational only; not echoed into reports.
    #[serde(default = "default_workers", skip_serializing)]
    pub workers: usize,
    #[serde(default)]
    pub top5: bool,
    pub report: PathBuf,
    #[serde(default)]
    pub emit_confusion_csv: bool,
}

impl RunConfig {
    /// Parses a config file; relative paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| {
            HarnessError::ConfigInvalid(format!("cannot read {}: {e}", path.display()))
        })?;
        let mut config: RunConfig = serde_json::from_str(&text).map_err(|e| {
            HarnessError::ConfigInvalid(format!("{}: {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.test_embeddings);
        fix(&mut self.paths.text_embeddings);
        fix(&mut self.report);
        for p in [
            &mut self.paths.train_embeddings,
            &mut self.paths.calibration_embeddings,
            &mut self.paths.class_order,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Checks field combinations that do not need any data to verify.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::ConfigInvalid(m.to_string()));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive and finite");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        match (self.pooling, self.top_k) {
            (PoolingMode::DecisionTopK, None) => return bad("decision_top_k pooling needs top_k"),
            (PoolingMode::DecisionTopK, Some(_)) if self.paths.calibration_embeddings.is_none() => {
                return bad("decision_top_k pooling needs paths.calibration_embeddings")
            }
            (PoolingMode::DecisionTopK, Some(_)) => {}
            (_, Some(_)) => return bad("top_k is only valid with decision_top_k pooling"),
            (_, None) => {}
        }
        if self.paths.calibration_embeddings.as_ref() == Some(&self.paths.test_embeddings) {
            return bad("calibration split must differ from the test split");
        }
        let s = &self.scenario;
        match s.kind {
            ScenarioChoice::ClassIncremental => {
                if s.steps.is_none() && s.increment.is_none() {
                    return bad("class_incremental needs steps or increment");
                }
                if s.domains.is_some() || s.num_microbatches.is_some() || s.sigma.is_some() {
                    return bad("class_incremental takes steps/base/increment only");
                }
            }
            ScenarioChoice::DomainIncremental => {
                if s.steps.is_some() || s.base.is_some() || s.increment.is_some() {
                    return bad("domain_incremental does not take steps/base/increment");
                }
            }
            ScenarioChoice::TaskFree => {
                match s.num_microbatches {
                    None | Some(0) => return bad("task_free needs num_microbatches >= 1"),
                    Some(_) => {}
                }
                match s.sigma {
                    Some(sigma) if sigma > 0.0 && sigma.is_finite() => {}
                    _ => return bad("task_free needs a positive sigma"),
                }
                if self.paths.train_embeddings.is_none() {
                    return bad("task_free needs paths.train_embeddings");
                }
            }
        }
        Ok(())
    }

    /// `(base, increment)` for a class-incremental run over `total` classes.
    pub fn class_split(&self, total: usize) -> Result<(usize, usize), HarnessError> {
        let s = &self.scenario;
        let bad = |m: String| Err(HarnessError::ConfigInvalid(m));
        let (base, increment) = match (s.base, s.increment, s.steps) {
            (base, Some(inc), _) => (base.unwrap_or(inc), inc),
            (None, None, Some(steps)) => {
                if steps == 0 || !total.is_multiple_of(steps) {
                    return bad(format!("{total} classes cannot be split into {steps} equal steps"));
                }
                (total / steps, total / steps)
            }
            (Some(base), None, Some(steps)) => {
                if base > total {
                    return bad(format!("base {base} exceeds {total} classes"));
                }
                match steps {
                    0 => return bad("steps must be at least 1".into()),
                    1 if base == total => (base, base),
                    1 => return bad(format!("a single step must hold all {total} classes")),
                    _ if !(total - base).is_multiple_of(steps - 1) || total == base => {
                        return bad(format!(
                            "{} classes after base {base} cannot fill {} steps",
                            total - base,
                            steps - 1
                        ))
                    }
                    _ => (base, (total - base) / (steps - 1)),
                }
            }
            (_, None, None) => return bad("class_incremental needs steps or increment".into()),
        };
        if let Some(steps) = s.steps {
            let implied = if base >= total || increment == 0 {
                1
            } else {
                1 + (total - base) / increment
            };
            if implied != steps {
                return bad(format!(
                    "steps = {steps} disagrees with base {base} / increment {increment} over {total} classes"
                ));
            }
        }
        Ok((base, increment))
    }
}
