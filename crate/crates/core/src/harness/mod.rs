//! Config-driven evaluation runs and their reports.

mod config;
mod report;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::time::Instant;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifier::{
    evaluate_step, pool_embeddings, select_top_k_prompts, ClassifierError, ClassifierHead, EvalOptions,
    StepEvaluation,
};
use crate::embedding_store::{labels_path, load_table, manifest_path, EmbeddingTable, Manifest, StoreError};
use crate::metrics::{avg_accuracy, domain_metrics, last_accuracy, AccuracyMatrix, MetricsError, StepAccuracySeries};
use crate::scenario::{
    build_class_incremental_with_order, build_domain_incremental, build_gaussian_schedule, read_class_order,
    seeded_class_order, seen_classes, Scenario, ScenarioError,
};

pub use config::{DataPaths, PoolingMode, RunConfig, ScenarioChoice, ScenarioConfig};
pub use report::{
    confusion_csv_path, emit_report, parse_report, DomainSummary, EvalReport, HeadSummary, InputDigest,
    ScenarioSummary, StepRecord, Summary, REPORT_SCHEMA_VERSION,
};

pub const EXIT_CONFIG_ERROR: i32 = 2;
pub const EXIT_DATA_ERROR: i32 = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("class {0} has no text prototype")]
    MissingClassEmbedding(u32),
    #[error("report schema violation: {0}")]
    SchemaViolation(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o failure on {path}: {message}")]
    Io { path: String, message: String },
}

impl HarnessError {
    /// Process exit code for the CLI: 2 for config problems, 3 for data problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::ConfigInvalid(_) => EXIT_CONFIG_ERROR,
            _ => EXIT_DATA_ERROR,
        }
    }
}

fn sha256_file(path: &Path) -> Result<String, HarnessError> {
    let bytes = fs::read(path).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

struct Inputs {
    test: EmbeddingTable,
    test_manifest: Option<Manifest>,
    text: EmbeddingTable,
    text_manifest: Manifest,
    digests: Vec<InputDigest>,
}

fn digest_table(role: &str, cemb: &Path, out: &mut Vec<InputDigest>) -> Result<(), HarnessError> {
    let siblings = [
        (role.to_string(), cemb.to_path_buf()),
        (format!("{role}_labels"), labels_path(cemb)),
        (format!("{role}_manifest"), manifest_path(cemb)),
    ];
    for (i, (role, path)) in siblings.into_iter().enumerate() {
        if i == 0 || path.exists() {
            out.push(InputDigest {
                sha256: sha256_file(&path)?,
                role,
                path,
            });
        }
    }
    Ok(())
}

fn load_inputs(config: &RunConfig) -> Result<Inputs, HarnessError> {
    let paths = &config.paths;
    let mut digests = Vec::new();

    let test = load_table(&paths.test_embeddings)?;
    if test.labels().is_none() {
        return Err(HarnessError::Data(format!(
            "{} has no labels file",
            paths.test_embeddings.display()
        )));
    }
    let test_manifest_path = manifest_path(&paths.test_embeddings);
    let test_manifest = test_manifest_path
        .exists()
        .then(|| Manifest::load(&test_manifest_path))
        .transpose()?;
    digest_table("test", &paths.test_embeddings, &mut digests)?;

    let text = load_table(&paths.text_embeddings)?;
    let text_manifest = Manifest::load(&manifest_path(&paths.text_embeddings))?;
    text_manifest.check_table(&text)?;
    digest_table("text", &paths.text_embeddings, &mut digests)?;

    if let Some(m) = &test_manifest {
        m.check_table(&test)?;
        if m.class_names != text_manifest.class_names {
            return Err(HarnessError::Data(
                "test and text manifests list different class names".into(),
            ));
        }
    }
    if test.dim() != text.dim() {
        return Err(HarnessError::DimMismatch(format!(
            "test embeddings have dim {}, text embeddings {}",
            test.dim(),
            text.dim()
        )));
    }
    let num_classes = text_manifest.class_names.len() as u32;
    if let Some(&bad) = test.labels().unwrap_or_default().iter().find(|&&l| l >= num_classes) {
        return Err(HarnessError::MissingClassEmbedding(bad));
    }
    for (role, p) in [
        ("train", &paths.train_embeddings),
        ("calibration", &paths.calibration_embeddings),
    ] {
        if let Some(p) = p {
            digest_table(role, p, &mut digests)?;
        }
    }
    if let Some(p) = &paths.class_order {
        digests.push(InputDigest {
            role: "class_order".into(),
            path: p.clone(),
            sha256: sha256_file(p)?,
        });
    }
    Ok(Inputs {
        test,
        test_manifest,
        text,
        text_manifest,
        digests,
    })
}

fn config_err(e: ScenarioError) -> HarnessError {
    HarnessError::ConfigInvalid(e.to_string())
}

fn build_scenario(config: &RunConfig, inputs: &Inputs) -> Result<Scenario, HarnessError> {
    let total = inputs.text_manifest.class_names.len();
    let mut scenario = match config.scenario.kind {
        ScenarioChoice::ClassIncremental => {
            let (base, increment) = config.class_split(total)?;
            let order = match &config.paths.class_order {
                Some(p) => read_class_order(p)?,
                None => seeded_class_order(total, config.seed),
            };
            if order.len() != total {
                return Err(HarnessError::ConfigInvalid(format!(
                    "class order lists {} classes, manifest has {total}",
                    order.len()
                )));
            }
            build_class_incremental_with_order(&order, base, increment, config.seed).map_err(config_err)?
        }
        ScenarioChoice::DomainIncremental => {
            let domains = match &config.scenario.domains {
                Some(d) => d.clone(),
                None => default_domains(inputs),
            };
            build_domain_incremental(total, &domains).map_err(config_err)?
        }
        ScenarioChoice::TaskFree => {
            let train_path = config.paths.train_embeddings.as_ref().expect("validated");
            let train = load_table(train_path)?;
            let labels = train.labels().ok_or_else(|| {
                HarnessError::Data(format!("{} has no labels file", train_path.display()))
            })?;
            let scenario = build_gaussian_schedule(
                labels,
                config.scenario.num_microbatches.expect("validated"),
                config.scenario.sigma.expect("validated"),
                config.seed,
            )
            .map_err(|e| match e {
                ScenarioError::EmptyLabels => HarnessError::Data(e.to_string()),
                other => config_err(other),
            })?;
            if scenario.total_classes > total {
                return Err(HarnessError::MissingClassEmbedding(scenario.total_classes as u32 - 1));
            }
            Scenario {
                total_classes: total,
                ..scenario
            }
        }
    };
    scenario.config_name = format!("{}:{}", config.name, scenario.config_name);
    scenario.validate()?;
    Ok(scenario)
}

/// Manifest domain order when the manifest names domains, otherwise the
/// distinct domain ids of the test split, otherwise a single domain 0.
fn default_domains(inputs: &Inputs) -> Vec<u32> {
    if let Some(names) = inputs.test_manifest.as_ref().and_then(|m| m.domain_names.as_ref()) {
        return (0..names.len() as u32).collect();
    }
    match inputs.test.domain_ids() {
        Some(ids) => ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect(),
        None => vec![0],
    }
}

struct PreparedHead {
    head: ClassifierHead,
    prompts: Option<Vec<usize>>,
    summary: HeadSummary,
}

fn prepare_head(config: &RunConfig, inputs: &Inputs) -> Result<PreparedHead, HarnessError> {
    let grid = ClassifierHead::from_text_table(&inputs.text, &inputs.text_manifest)?
        .with_temperature(config.temperature)?;
    let num_prompts = grid.num_prompts();
    let (head, prompts) = match config.pooling {
        PoolingMode::Embedding => (pool_embeddings(&grid)?, None),
        PoolingMode::Decision => (grid, None),
        PoolingMode::DecisionTopK => {
            let path = config.paths.calibration_embeddings.as_ref().expect("validated");
            let calibration = load_table(path)?;
            if calibration.dim() != grid.dim() {
                return Err(HarnessError::DimMismatch(format!(
                    "calibration embeddings have dim {}, text embeddings {}",
                    calibration.dim(),
                    grid.dim()
                )));
            }
            let k = config.top_k.expect("validated");
            if k == 0 || k > num_prompts {
                return Err(HarnessError::ConfigInvalid(format!(
                    "top_k = {k} outside 1..={num_prompts}"
                )));
            }
            let selected = select_top_k_prompts(&grid, &calibration, k)?;
            log::info!("selected prompts {selected:?}");
            (grid, Some(selected))
        }
    };
    let summary = HeadSummary {
        pooling: config.pooling,
        num_prompts,
        selected_prompts: prompts.clone(),
        temperature: config.temperature,
        source_model: inputs.text_manifest.source_model.clone(),
    };
    Ok(PreparedHead {
        head,
        prompts,
        summary,
    })
}

/// Evaluations keyed by (seen classes, domain filter). The head is frozen,
/// so an identical key always yields an identical evaluation.
struct Evaluator<'a> {
    prepared: &'a PreparedHead,
    test: &'a EmbeddingTable,
    opts: EvalOptions,
    domain_tables: HashMap<u32, EmbeddingTable>,
    cache: HashMap<(Vec<u32>, Option<u32>), StepEvaluation>,
}

impl<'a> Evaluator<'a> {
    fn new(prepared: &'a PreparedHead, test: &'a EmbeddingTable, config: &RunConfig) -> Self {
        Self {
            prepared,
            test,
            opts: EvalOptions {
                prompts: prepared.prompts.clone(),
                workers: config.workers,
                top5: config.top5,
            },
            domain_tables: HashMap::new(),
            cache: HashMap::new(),
        }
    }

    fn evaluate(&mut self, seen: &[u32], domain: Option<u32>) -> Result<StepEvaluation, HarnessError> {
        let key = (seen.to_vec(), domain);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit.clone());
        }
        let table = match domain {
            None => self.test,
            Some(d) => {
                let test = self.test;
                self.domain_tables.entry(d).or_insert_with(|| {
                    let ids = test.domain_ids().expect("domain split requires domain ids");
                    let rows: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] == d).collect();
                    test.select_rows(&rows)
                })
            }
        };
        let head = self.prepared.head.restrict(seen)?;
        let eval = evaluate_step(&head, table, seen, &self.opts).map_err(|e| match (e, domain) {
            (ClassifierError::EmptyTestSet, Some(d)) => {
                HarnessError::Data(format!("domain {d} has no test rows for the seen classes"))
            }
            (e, _) => e.into(),
        })?;
        self.cache.insert(key, eval.clone());
        Ok(eval)
    }
}

/// Evaluates `config` end to end without writing anything.
pub fn evaluate(config: &RunConfig) -> Result<EvalReport, HarnessError> {
    let started = Instant::now();
    config.validate()?;
    let inputs = load_inputs(config)?;
    let scenario = build_scenario(config, &inputs)?;
    let prepared = prepare_head(config, &inputs)?;
    log::info!(
        "{}: {} tasks over {} classes, {} test rows",
        scenario.config_name,
        scenario.num_tasks(),
        scenario.total_classes,
        inputs.test.num_rows()
    );

    let domain_columns: Option<Vec<u32>> = match (config.scenario.kind, inputs.test.domain_ids()) {
        (ScenarioChoice::DomainIncremental, Some(_)) => {
            Some(scenario.tasks.iter().filter_map(|t| t.domain_id()).collect())
        }
        _ => None,
    };

    let mut evaluator = Evaluator::new(&prepared, &inputs.test, config);
    let mut steps = Vec::with_capacity(scenario.num_tasks());
    for step in 0..scenario.num_tasks() {
        let seen = seen_classes(&scenario, step)?;
        let eval = evaluator.evaluate(&seen, None)?;
        let domain_accuracies = match &domain_columns {
            Some(cols) => Some(
                cols.iter()
                    .map(|&d| evaluator.evaluate(&seen, Some(d)).map(|e| e.accuracy))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            None => None,
        };
        log::info!(
            "step {step}: {} seen classes, accuracy {:.4} over {} rows",
            seen.len(),
            eval.accuracy,
            eval.num_rows
        );
        steps.push(StepRecord {
            step,
            seen_classes: seen.len(),
            num_test: eval.num_rows,
            correct: eval.correct,
            accuracy: eval.accuracy,
            top5_accuracy: eval.top5_accuracy(),
            domain_accuracies,
            confusion: eval.confusion,
        });
    }

    let series = StepAccuracySeries::new(steps.iter().map(|s| s.accuracy).collect())?;
    let top5_series = steps
        .iter()
        .map(|s| s.top5_accuracy)
        .collect::<Option<Vec<_>>>()
        .map(StepAccuracySeries::new)
        .transpose()?;
    let domain = match domain_columns {
        Some(domain_ids) => {
            let matrix = AccuracyMatrix::new(
                steps
                    .iter()
                    .map(|s| s.domain_accuracies.clone().expect("filled above"))
                    .collect(),
            )?;
            Some(DomainSummary {
                metrics: (matrix.size() >= 2).then(|| domain_metrics(&matrix)).transpose()?,
                in_domain: matrix.in_domain(),
                overall: matrix.overall(),
                domain_ids,
                matrix,
            })
        }
        None => None,
    };
    let summary = Summary {
        avg: avg_accuracy(&series),
        last: last_accuracy(&series),
        avg_top5: top5_series.as_ref().map(avg_accuracy),
        last_top5: top5_series.as_ref().map(last_accuracy),
        domain,
    };

    let report = EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: config.clone(),
        scenario: ScenarioSummary {
            config_name: scenario.config_name.clone(),
            kind: scenario.kind(),
            seed: scenario.seed,
            num_tasks: scenario.num_tasks(),
            total_classes: scenario.total_classes,
            step_sizes: scenario.step_sizes(),
        },
        head: prepared.summary.clone(),
        steps,
        summary,
        inputs: inputs.digests,
        duration_secs: started.elapsed().as_secs_f64(),
    };
    report.validate()?;
    Ok(report)
}

/// Evaluates `config` and writes the report (plus confusion CSVs if enabled).
pub fn run(config: &RunConfig) -> Result<EvalReport, HarnessError> {
    let report = evaluate(config)?;
    emit_report(&report, &config.report, config.emit_confusion_csv)?;
    log::info!(
        "avg {:.4} last {:.4} -> {}",
        report.summary.avg,
        report.summary.last,
        config.report.display()
    );
    Ok(report)
}
