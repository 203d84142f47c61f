use std::fs;
use std::path::Path;
use std::process::Command;

use continual_zeroshot::embedding_store::{manifest_path, save_table, EmbeddingTable, Manifest};
use continual_zeroshot::harness::{
    self, confusion_csv_path, emit_report, parse_report, DataPaths, HarnessError, PoolingMode, RunConfig,
    ScenarioChoice, ScenarioConfig,
};
use continual_zeroshot::synthetic::{self, SyntheticSpec};

fn scenario(kind: ScenarioChoice) -> ScenarioConfig {
    ScenarioConfig {
        kind,
        steps: None,
        base: None,
        increment: None,
        domains: None,
        num_microbatches: None,
        sigma: None,
    }
}

fn synthetic_config(dir: &Path, spec: &SyntheticSpec) -> RunConfig {
    let data = synthetic::generate(spec).unwrap();
    let paths = synthetic::write(&data, dir).unwrap();
    RunConfig {
        name: "test".into(),
        scenario: ScenarioConfig {
            steps: Some(5),
            ..scenario(ScenarioChoice::ClassIncremental)
        },
        paths: DataPaths {
            test_embeddings: paths.test,
            text_embeddings: paths.text,
            train_embeddings: Some(paths.train),
            calibration_embeddings: None,
            class_order: None,
        },
        pooling: PoolingMode::Embedding,
        top_k: None,
        temperature: 1.0,
        seed: 3,
        workers: 1,
        top5: false,
        report: dir.join("report.json"),
        emit_confusion_csv: false,
    }
}

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        num_classes: 20,
        dim: 16,
        test_per_class: 10,
        train_per_class: 6,
        noise: 0.25,
        ..Default::default()
    }
}

/// Orthogonal prototypes with test rows equal to them.
fn write_orthogonal(dir: &Path, classes: usize) -> RunConfig {
    let mut text = Vec::new();
    for c in 0..classes {
        let mut r = vec![0.0f32; classes];
        r[c] = 1.0;
        text.push(r);
    }
    let names: Vec<String> = (0..classes).map(|c| format!("c{c}")).collect();
    let text_table = EmbeddingTable::from_rows(&text, None).unwrap();
    let test_rows: Vec<Vec<f32>> = text.iter().flat_map(|r| [r.clone(), r.clone()]).collect();
    let labels = (0..classes as u32).flat_map(|c| [c, c]).collect();
    let test_table = EmbeddingTable::from_rows(&test_rows, Some(labels)).unwrap();
    let text_path = dir.join("texts.cemb");
    let test_path = dir.join("test.cemb");
    save_table(&text_table, &text_path).unwrap();
    save_table(&test_table, &test_path).unwrap();
    Manifest::new(names, "orthogonal").save(&manifest_path(&text_path)).unwrap();
    RunConfig {
        name: "ortho".into(),
        scenario: ScenarioConfig {
            steps: Some(classes / 2),
            ..scenario(ScenarioChoice::ClassIncremental)
        },
        paths: DataPaths {
            test_embeddings: test_path,
            text_embeddings: text_path,
            train_embeddings: None,
            calibration_embeddings: None,
            class_order: None,
        },
        pooling: PoolingMode::Embedding,
        top_k: None,
        temperature: 1.0,
        seed: 0,
        workers: 1,
        top5: true,
        report: dir.join("ortho.json"),
        emit_confusion_csv: true,
    }
}

#[test]
fn orthogonal_self_match_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_orthogonal(dir.path(), 8);
    let report = harness::run(&config).unwrap();
    assert_eq!(report.steps.len(), 4);
    assert!(report.steps.iter().all(|s| s.accuracy == 1.0));
    assert_eq!(report.summary.avg, 1.0);
    assert_eq!(report.summary.last_top5, Some(1.0));
    let seen: Vec<usize> = report.steps.iter().map(|s| s.seen_classes).collect();
    assert_eq!(seen, vec![2, 4, 6, 8]);
}

#[test]
fn single_step_avg_equals_last() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = synthetic_config(dir.path(), &small_spec());
    config.scenario.steps = Some(1);
    let report = harness::evaluate(&config).unwrap();
    assert_eq!(report.steps.len(), 1);
    assert_eq!(report.summary.avg, report.summary.last);
}

#[test]
fn b50_style_split_via_base() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = synthetic_config(dir.path(), &small_spec());
    config.scenario.steps = Some(6);
    config.scenario.base = Some(10);
    let report = harness::evaluate(&config).unwrap();
    assert_eq!(report.scenario.step_sizes, vec![10, 2, 2, 2, 2, 2]);
    assert_eq!(report.steps[0].seen_classes, 10);
}

#[test]
fn report_round_trips_and_csv_census_holds() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = synthetic_config(dir.path(), &small_spec());
    config.emit_confusion_csv = true;
    let report = harness::run(&config).unwrap();
    let text = fs::read_to_string(&config.report).unwrap();
    assert_eq!(parse_report(&text).unwrap(), report);

    let labels = continual_zeroshot::load_table(&config.paths.test_embeddings)
        .unwrap()
        .labels()
        .unwrap()
        .to_vec();
    for step in &report.steps {
        let csv = fs::read_to_string(confusion_csv_path(&config.report, step.step)).unwrap();
        let mut lines = csv.lines();
        let header: Vec<u32> = lines.next().unwrap().split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        assert_eq!(header, step.confusion.class_ids);
        let mut col_sums = vec![0u64; header.len()];
        for line in lines {
            let mut cells = line.split(',');
            let class: u32 = cells.next().unwrap().parse().unwrap();
            let counts: Vec<u64> = cells.map(|c| c.parse().unwrap()).collect();
            let expected = labels.iter().filter(|&&l| l == class).count() as u64;
            assert_eq!(counts.iter().sum::<u64>(), expected);
            for (s, c) in col_sums.iter_mut().zip(&counts) {
                *s += c;
            }
        }
        assert_eq!(col_sums, step.confusion.col_sums());
        assert_eq!(col_sums.iter().sum::<u64>(), step.num_test);
    }
}

#[test]
fn schema_rejects_mismatched_step_count() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthetic_config(dir.path(), &small_spec());
    let mut report = harness::evaluate(&config).unwrap();
    report.steps.pop();
    assert!(matches!(parse_report(&report.to_json()), Err(HarnessError::SchemaViolation(_))));
    assert!(matches!(
        emit_report(&report, &dir.path().join("x.json"), false),
        Err(HarnessError::SchemaViolation(_))
    ));
    let mut report = harness::evaluate(&config).unwrap();
    report.steps[1].confusion.counts.pop();
    assert!(report.validate().is_err());
}

#[test]
fn replay_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = synthetic_config(dir.path(), &small_spec());
    config.top5 = true;
    let a = harness::evaluate(&config).unwrap();
    config.workers = 8;
    let b = harness::evaluate(&config).unwrap();
    assert_eq!(a.without_timing().to_json(), b.without_timing().to_json());
    assert_eq!(a.inputs.len(), 8);
}

#[test]
fn seed_changes_class_order_but_not_last() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = synthetic_config(dir.path(), &small_spec());
    let a = harness::evaluate(&config).unwrap();
    config.seed = 99;
    let b = harness::evaluate(&config).unwrap();
    assert_ne!(a.steps[0].confusion.class_ids, b.steps[0].confusion.class_ids);
    assert_eq!(a.summary.last, b.summary.last);
}

#[test]
fn class_order_override_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = synthetic_config(dir.path(), &small_spec());
    let order: Vec<String> = (0..20).rev().map(|c: u32| c.to_string()).collect();
    let order_path = dir.path().join("order.txt");
    fs::write(&order_path, order.join("\n")).unwrap();
    config.paths.class_order = Some(order_path);
    let report = harness::evaluate(&config).unwrap();
    assert_eq!(report.steps[0].confusion.class_ids, vec![16, 17, 18, 19]);
    assert!(report.inputs.iter().any(|d| d.role == "class_order"));
}

#[test]
fn domain_incremental_matrix_rows_are_constant() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        num_domains: 4,
        domain_shift: 0.15,
        ..small_spec()
    };
    let mut config = synthetic_config(dir.path(), &spec);
    config.scenario = scenario(ScenarioChoice::DomainIncremental);
    let report = harness::evaluate(&config).unwrap();
    let domain = report.summary.domain.as_ref().unwrap();
    assert_eq!(domain.domain_ids, vec![0, 1, 2, 3]);
    assert!(domain.matrix.rows_identical());
    let m = domain.metrics.unwrap();
    // with identical rows a_j, every entry in column j equals a_j
    let a = &domain.matrix.rows()[0];
    let column_mean = a.iter().sum::<f64>() / 4.0;
    assert!((m.overall - column_mean).abs() < 1e-12);
    assert!((m.in_domain - column_mean).abs() < 1e-12);
    // strict triangles weight column j by how many rows lie below / above it
    let backward = (0..4).map(|j| a[j] * (3 - j) as f64).sum::<f64>() / 6.0;
    let forward = (0..4).map(|j| a[j] * j as f64).sum::<f64>() / 6.0;
    assert!((m.backward - backward).abs() < 1e-12);
    assert!((m.forward - forward).abs() < 1e-12);
    assert!((m.next_domain - (a[1] + a[2] + a[3]) / 3.0).abs() < 1e-12);
    assert!(report.steps.iter().all(|s| s.seen_classes == 20));
}

#[test]
fn domain_order_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { num_domains: 3, ..small_spec() };
    let mut config = synthetic_config(dir.path(), &spec);
    config.scenario = ScenarioConfig {
        domains: Some(vec![2, 0]),
        ..scenario(ScenarioChoice::DomainIncremental)
    };
    let report = harness::evaluate(&config).unwrap();
    assert_eq!(report.summary.domain.unwrap().domain_ids, vec![2, 0]);
    config.scenario.domains = Some(vec![1, 1]);
    assert!(matches!(harness::evaluate(&config), Err(HarnessError::ConfigInvalid(_))));
}

#[test]
fn single_test_set_domain_run_has_no_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = synthetic_config(dir.path(), &small_spec());
    config.scenario = ScenarioConfig {
        domains: Some(vec![0, 1, 2]),
        ..scenario(ScenarioChoice::DomainIncremental)
    };
    let report = harness::evaluate(&config).unwrap();
    assert!(report.summary.domain.is_none());
    assert_eq!(report.steps.len(), 3);
}

#[test]
fn task_free_stream_reports_every_microbatch() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = synthetic_config(dir.path(), &small_spec());
    config.scenario = ScenarioConfig {
        num_microbatches: Some(30),
        sigma: Some(1.5),
        ..scenario(ScenarioChoice::TaskFree)
    };
    let report = harness::evaluate(&config).unwrap();
    assert_eq!(report.steps.len(), 30);
    assert_eq!(report.scenario.step_sizes.iter().sum::<usize>(), 20 * 6);
    let first = report.steps[0].accuracy;
    assert!(report.steps.iter().all(|s| s.accuracy == first));
}

#[test]
fn decision_pooling_modes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        num_prompts: 6,
        prompt_noise: 0.3,
        ..small_spec()
    };
    let mut config = synthetic_config(dir.path(), &spec);
    let embedding = harness::evaluate(&config).unwrap();
    assert_eq!(embedding.head.num_prompts, 6);

    config.pooling = PoolingMode::Decision;
    let decision = harness::evaluate(&config).unwrap();
    assert!(decision.head.selected_prompts.is_none());

    config.pooling = PoolingMode::DecisionTopK;
    config.top_k = Some(2);
    config.paths.calibration_embeddings = config.paths.train_embeddings.clone();
    let top = harness::evaluate(&config).unwrap();
    assert_eq!(top.head.selected_prompts.as_ref().unwrap().len(), 2);

    config.top_k = Some(7);
    assert!(matches!(harness::evaluate(&config), Err(HarnessError::ConfigInvalid(_))));
}

#[test]
fn data_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = synthetic_config(dir.path(), &small_spec());

    // text manifest with fewer classes than the test labels use
    let text_manifest = manifest_path(&config.paths.text_embeddings);
    let mut m = Manifest::load(&text_manifest).unwrap();
    let other = dir.path().join("other_texts.cemb");
    let text = continual_zeroshot::load_table(&config.paths.text_embeddings).unwrap();
    let ten = text.select_rows(&(0..10).collect::<Vec<_>>());
    save_table(&ten, &other).unwrap();
    m.class_names.truncate(10);
    m.prompt_ids.as_mut().unwrap().truncate(10);
    m.save(&manifest_path(&other)).unwrap();
    fs::remove_file(manifest_path(&config.paths.test_embeddings)).unwrap();
    config.paths.text_embeddings = other;
    config.scenario.steps = Some(2);
    let err = harness::evaluate(&config).unwrap_err();
    assert!(matches!(err, HarnessError::MissingClassEmbedding(_)), "{err}");
    assert_eq!(err.exit_code(), 3);

    config.paths.test_embeddings = dir.path().join("missing.cemb");
    assert_eq!(harness::evaluate(&config).unwrap_err().exit_code(), 3);
}

#[test]
fn dim_mismatch_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = synthetic_config(dir.path(), &small_spec());
    let wide = synthetic::generate(&SyntheticSpec { dim: 24, ..small_spec() }).unwrap();
    let wide_dir = dir.path().join("wide");
    let paths = synthetic::write(&wide, &wide_dir).unwrap();
    config.paths.text_embeddings = paths.text;
    let err = harness::evaluate(&config).unwrap_err();
    assert!(matches!(err, HarnessError::DimMismatch(_)));
    assert_eq!(err.exit_code(), 3);
}

fn czs() -> Command {
    Command::new(env!("CARGO_BIN_EXE_czs"))
}

#[test]
fn cli_exit_codes_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let status = czs()
        .args(["synth", "--classes", "20", "--dim", "16", "--per-class", "8", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());

    let cfg = dir.path().join("class_incremental.json");
    let out = czs()
        .args(["run", "--steps", "4", "--emit-confusion-csv", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let report_path = dir.path().join("reports/class_incremental.json");
    let report = parse_report(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.steps.len(), 4);
    assert!(confusion_csv_path(&report_path, 3).exists());

    let tf = czs()
        .args(["run", "--microbatches", "10", "--config"])
        .arg(dir.path().join("task_free.json"))
        .output()
        .unwrap();
    assert_eq!(tf.status.code(), Some(0), "{}", String::from_utf8_lossy(&tf.stderr));

    // 20 classes do not split into 3 equal steps
    let bad = czs().args(["run", "--steps", "3", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(bad.code(), Some(2));
    let missing = czs().args(["run", "--config"]).arg(dir.path().join("nope.json")).status().unwrap();
    assert_eq!(missing.code(), Some(2));

    fs::remove_file(dir.path().join("synthetic_test.cemb")).unwrap();
    let data = czs().args(["run", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(data.code(), Some(3));
}
