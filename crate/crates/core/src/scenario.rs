//! Task sequences for class-incremental, domain-incremental and task-free
//! (Gaussian-scheduled) streams.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{remaining} classes after the base step cannot be split into increments of {increment}")]
    IndivisibleSplit { remaining: usize, increment: usize },
    #[error("too few classes: {0}")]
    TooFewClasses(String),
    #[error("domain {0} listed more than once")]
    DuplicateDomain(u32),
    #[error("no domains given")]
    NoDomains,
    #[error("label list is empty")]
    EmptyLabels,
    #[error("invalid schedule parameter: {0}")]
    InvalidParameter(String),
    #[error("step {step} out of range for a scenario of {num_tasks} tasks")]
    StepOutOfRange { step: usize, num_tasks: usize },
    #[error("invalid class order: {0}")]
    InvalidClassOrder(String),
    #[error("scenario invariant violated: {0}")]
    InvariantViolation(String),
    #[error("i/o failure on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    ClassIncremental,
    DomainIncremental,
    TaskFreeMicrobatch,
}

/// One step of a scenario. The variant fixes which optional fields exist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    /// Classes introduced at this step.
    ClassIncremental { class_ids: Vec<u32> },
    /// The shared label set, observed in domain `domain_id`.
    DomainIncremental { class_ids: Vec<u32>, domain_id: u32 },
    /// Training rows streamed in this micro-batch.
    TaskFreeMicrobatch { sample_indices: Vec<usize> },
}

impl TaskSpec {
    pub fn kind(&self) -> ScenarioKind {
        match self {
            TaskSpec::ClassIncremental { .. } => ScenarioKind::ClassIncremental,
            TaskSpec::DomainIncremental { .. } => ScenarioKind::DomainIncremental,
            TaskSpec::TaskFreeMicrobatch { .. } => ScenarioKind::TaskFreeMicrobatch,
        }
    }

    pub fn class_ids(&self) -> &[u32] {
        match self {
            TaskSpec::ClassIncremental { class_ids } | TaskSpec::DomainIncremental { class_ids, .. } => {
                class_ids
            }
            TaskSpec::TaskFreeMicrobatch { .. } => &[],
        }
    }

    pub fn domain_id(&self) -> Option<u32> {
        match self {
            TaskSpec::DomainIncremental { domain_id, .. } => Some(*domain_id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub config_name: String,
    pub seed: u64,
    pub total_classes: usize,
    pub tasks: Vec<TaskSpec>,
}

impl Scenario {
    pub fn kind(&self) -> ScenarioKind {
        self.tasks
            .first()
            .map_or(ScenarioKind::ClassIncremental, TaskSpec::kind)
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Number of classes each task contributes (class-incremental) or
    /// carries (domain-incremental); micro-batch sizes for task-free streams.
    pub fn step_sizes(&self) -> Vec<usize> {
        self.tasks
            .iter()
            .map(|t| match t {
                TaskSpec::TaskFreeMicrobatch { sample_indices } => sample_indices.len(),
                other => other.class_ids().len(),
            })
            .collect()
    }

    /// Checks the structural invariants of the scenario's kind.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::InvariantViolation(m));
        if self.tasks.is_empty() {
            return bad("scenario has no tasks".into());
        }
        let kind = self.kind();
        if self.tasks.iter().any(|t| t.kind() != kind) {
            return bad("tasks mix scenario kinds".into());
        }
        match kind {
            ScenarioKind::ClassIncremental => {
                let mut seen = vec![false; self.total_classes];
                for (step, task) in self.tasks.iter().enumerate() {
                    if task.class_ids().is_empty() {
                        return bad(format!("task {step} introduces no classes"));
                    }
                    for &c in task.class_ids() {
                        match seen.get_mut(c as usize) {
                            None => return bad(format!("class {c} >= {}", self.total_classes)),
                            Some(true) => return bad(format!("class {c} appears in two tasks")),
                            Some(slot) => *slot = true,
                        }
                    }
                }
                if let Some(missing) = seen.iter().position(|&s| !s) {
                    return bad(format!("class {missing} never introduced"));
                }
            }
            ScenarioKind::DomainIncremental => {
                let full: Vec<u32> = (0..self.total_classes as u32).collect();
                let mut domains = BTreeSet::new();
                for task in &self.tasks {
                    if task.class_ids() != full.as_slice() {
                        return bad("domain tasks must share the full label set".into());
                    }
                    let d = task.domain_id().expect("domain task");
                    if !domains.insert(d) {
                        return bad(format!("domain {d} repeated"));
                    }
                }
            }
            ScenarioKind::TaskFreeMicrobatch => {
                let mut all = BTreeSet::new();
                for task in &self.tasks {
                    if let TaskSpec::TaskFreeMicrobatch { sample_indices } = task {
                        for &i in sample_indices {
                            if !all.insert(i) {
                                return bad(format!("sample {i} appears in two micro-batches"));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)
            .map_err(|e| ScenarioError::InvariantViolation(format!("malformed scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        fs::write(path, self.to_json()).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_json(&text)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> ScenarioError {
    ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Seeded uniform permutation of `0..total_classes`.
pub fn seeded_class_order(total_classes: usize, seed: u64) -> Vec<u32> {
    let mut order: Vec<u32> = (0..total_classes as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
}

/// Reads a class-order override: one class id per line, blank lines ignored.
pub fn read_class_order(path: &Path) -> Result<Vec<u32>, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(n, l)| {
            l.parse::<u32>().map_err(|_| {
                ScenarioError::InvalidClassOrder(format!("line {}: {l:?} is not a class id", n + 1))
            })
        })
        .collect()
}

/// Class-incremental split with a seeded class order.
pub fn build_class_incremental(
    total_classes: usize,
    base_classes: usize,
    increment: usize,
    class_order_seed: u64,
) -> Result<Scenario, ScenarioError> {
    let order = seeded_class_order(total_classes, class_order_seed);
    build_class_incremental_with_order(&order, base_classes, increment, class_order_seed)
}

/// Class-incremental split over an explicit class order (a permutation of
/// `0..order.len()`).
pub fn build_class_incremental_with_order(
    order: &[u32],
    base_classes: usize,
    increment: usize,
    seed: u64,
) -> Result<Scenario, ScenarioError> {
    let total_classes = order.len();
    check_permutation(order)?;
    if base_classes == 0 || increment == 0 {
        return Err(ScenarioError::TooFewClasses(
            "base and increment must each be at least 1".into(),
        ));
    }
    if base_classes > total_classes {
        return Err(ScenarioError::TooFewClasses(format!(
            "base step needs {base_classes} classes, only {total_classes} available"
        )));
    }
    let remaining = total_classes - base_classes;
    if !remaining.is_multiple_of(increment) {
        return Err(ScenarioError::IndivisibleSplit {
            remaining,
            increment,
        });
    }
    let mut tasks = vec![TaskSpec::ClassIncremental {
        class_ids: order[..base_classes].to_vec(),
    }];
    tasks.extend(
        order[base_classes..]
            .chunks(increment)
            .map(|chunk| TaskSpec::ClassIncremental {
                class_ids: chunk.to_vec(),
            }),
    );
    let config_name = if base_classes == increment {
        format!("class_incremental_{total_classes}_b0_{}steps", tasks.len())
    } else {
        format!("class_incremental_{total_classes}_b{base_classes}_inc{increment}")
    };
    Ok(Scenario {
        config_name,
        seed,
        total_classes,
        tasks,
    })
}

fn check_permutation(order: &[u32]) -> Result<(), ScenarioError> {
    let mut seen = vec![false; order.len()];
    for &c in order {
        match seen.get_mut(c as usize) {
            None => {
                return Err(ScenarioError::InvalidClassOrder(format!(
                    "class {c} outside 0..{}",
                    order.len()
                )))
            }
            Some(true) => {
                return Err(ScenarioError::InvalidClassOrder(format!("class {c} listed twice")))
            }
            Some(slot) => *slot = true,
        }
    }
    Ok(())
}

/// One task per domain, in the given order, all sharing `0..num_classes`.
pub fn build_domain_incremental(
    num_classes: usize,
    domain_ids: &[u32],
) -> Result<Scenario, ScenarioError> {
    if domain_ids.is_empty() {
        return Err(ScenarioError::NoDomains);
    }
    if num_classes == 0 {
        return Err(ScenarioError::TooFewClasses("domain scenario with no classes".into()));
    }
    let mut seen = BTreeSet::new();
    if let Some(&dup) = domain_ids.iter().find(|&&d| !seen.insert(d)) {
        return Err(ScenarioError::DuplicateDomain(dup));
    }
    let class_ids: Vec<u32> = (0..num_classes as u32).collect();
    Ok(Scenario {
        config_name: format!("domain_incremental_{num_classes}_{}domains", domain_ids.len()),
        seed: 0,
        total_classes: num_classes,
        tasks: domain_ids
            .iter()
            .map(|&domain_id| TaskSpec::DomainIncremental {
                class_ids: class_ids.clone(),
                domain_id,
            })
            .collect(),
    })
}

/// Task-free stream: class `c` is centred on micro-batch
/// `c * num_microbatches / num_classes` and each of its samples is placed
/// at a Gaussian offset from that centre, clamped into range and rounded.
pub fn build_gaussian_schedule(
    labels: &[u32],
    num_microbatches: usize,
    sigma: f64,
    seed: u64,
) -> Result<Scenario, ScenarioError> {
    if labels.is_empty() {
        return Err(ScenarioError::EmptyLabels);
    }
    if num_microbatches == 0 {
        return Err(ScenarioError::InvalidParameter("num_microbatches must be >= 1".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(ScenarioError::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let num_classes = *labels.iter().max().expect("non-empty") as usize + 1;
    let last = (num_microbatches - 1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batches = vec![Vec::new(); num_microbatches];
    for (row, &label) in labels.iter().enumerate() {
        let mean = class_mean(label as usize, num_classes, num_microbatches);
        let draw = Normal::new(mean, sigma)
            .expect("sigma validated")
            .sample(&mut rng);
        let batch = draw.clamp(0.0, last).round() as usize;
        batches[batch].push(row);
    }
    Ok(Scenario {
        config_name: format!("gaussian_schedule_{num_classes}_{num_microbatches}mb"),
        seed,
        total_classes: num_classes,
        tasks: batches
            .into_iter()
            .map(|sample_indices| TaskSpec::TaskFreeMicrobatch { sample_indices })
            .collect(),
    })
}

/// Centre of class `class` on the micro-batch axis.
pub fn class_mean(class: usize, num_classes: usize, num_microbatches: usize) -> f64 {
    class as f64 * num_microbatches as f64 / num_classes as f64
}

/// Classes the model is evaluated on after step `step`, sorted ascending.
pub fn seen_classes(scenario: &Scenario, step: usize) -> Result<Vec<u32>, ScenarioError> {
    if step >= scenario.tasks.len() {
        return Err(ScenarioError::StepOutOfRange {
            step,
            num_tasks: scenario.tasks.len(),
        });
    }
    let seen: BTreeSet<u32> = match scenario.kind() {
        ScenarioKind::ClassIncremental => scenario.tasks[..=step]
            .iter()
            .flat_map(|t| t.class_ids().iter().copied())
            .collect(),
        ScenarioKind::DomainIncremental | ScenarioKind::TaskFreeMicrobatch => {
            (0..scenario.total_classes as u32).collect()
        }
    };
    Ok(seen.into_iter().collect())
}
