use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde_json::json;

use continual_zeroshot::harness::{self, PoolingMode, RunConfig, ScenarioChoice, EXIT_CONFIG_ERROR};
use continual_zeroshot::synthetic::{self, SyntheticSpec};

#[derive(Parser)]
#[command(name = "czs", version, about = "Zero-shot continual-learning evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a config and write its report.
    Run(RunArgs),
    /// Write a synthetic embedding set plus example configs.
    Synth(SynthArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    scenario: Option<ScenarioChoice>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    base: Option<usize>,
    #[arg(long)]
    increment: Option<usize>,
    #[arg(long)]
    microbatches: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    pooling: Option<PoolingMode>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    emit_confusion_csv: bool,
    #[arg(long)]
    top5: bool,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    #[arg(long, default_value_t = 1)]
    prompts: usize,
    #[arg(long, default_value_t = 1)]
    domains: usize,
    #[arg(long, default_value_t = 0.3)]
    noise: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn apply_overrides(config: &mut RunConfig, args: &RunArgs) {
    let s = &mut config.scenario;
    if let Some(kind) = args.scenario {
        if kind != s.kind {
            // parameters of the previous kind do not carry over
            *s = harness::ScenarioConfig {
                kind,
                steps: None,
                base: None,
                increment: None,
                domains: None,
                num_microbatches: None,
                sigma: None,
            };
        }
    }
    if args.steps.is_some() {
        s.steps = args.steps;
        if args.increment.is_none() {
            s.increment = None;
        }
    }
    s.base = args.base.or(s.base);
    s.increment = args.increment.or(s.increment);
    s.num_microbatches = args.microbatches.or(s.num_microbatches);
    s.sigma = args.sigma.or(s.sigma);
    if let Some(p) = args.pooling {
        config.pooling = p;
    }
    config.top_k = args.top_k.or(config.top_k);
    config.temperature = args.temperature.unwrap_or(config.temperature);
    config.seed = args.seed.unwrap_or(config.seed);
    config.workers = args.workers.unwrap_or(config.workers);
    if let Some(r) = &args.report {
        config.report = r.clone();
    }
    config.emit_confusion_csv |= args.emit_confusion_csv;
    config.top5 |= args.top5;
}

fn run(args: RunArgs) -> ExitCode {
    let mut config = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG_ERROR as u8);
        }
    };
    apply_overrides(&mut config, &args);
    match harness::run(&config) {
        Ok(report) => {
            eprintln!(
                "avg {:.4}  last {:.4}  ({} steps) -> {}",
                report.summary.avg,
                report.summary.last,
                report.steps.len(),
                config.report.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn write_config(path: &Path, value: serde_json::Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(&value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(args: SynthArgs) -> anyhow::Result<()> {
    let spec = SyntheticSpec {
        num_classes: args.classes,
        dim: args.dim,
        test_per_class: args.per_class,
        num_prompts: args.prompts,
        num_domains: args.domains,
        noise: args.noise,
        domain_shift: if args.domains > 1 { 0.05 } else { 0.0 },
        seed: args.seed,
        ..Default::default()
    };
    let data = synthetic::generate(&spec)?;
    synthetic::write(&data, &args.out)?;
    let paths = json!({
        "test_embeddings": "synthetic_test.cemb",
        "text_embeddings": "synthetic_texts.cemb",
        "train_embeddings": "synthetic_train.cemb",
    });
    write_config(
        &args.out.join("class_incremental.json"),
        json!({
            "name": "synthetic_cil",
            "scenario": {"kind": "class_incremental", "steps": 10},
            "paths": paths,
            "seed": 1993,
            "report": "reports/class_incremental.json",
        }),
    )?;
    write_config(
        &args.out.join("task_free.json"),
        json!({
            "name": "synthetic_gaussian",
            "scenario": {"kind": "task_free", "num_microbatches": 50, "sigma": 2.0},
            "paths": paths,
            "report": "reports/task_free.json",
        }),
    )?;
    if args.domains > 1 {
        write_config(
            &args.out.join("domain_incremental.json"),
            json!({
                "name": "synthetic_dil",
                "scenario": {"kind": "domain_incremental"},
                "paths": paths,
                "report": "reports/domain_incremental.json",
            }),
        )?;
    }
    eprintln!("wrote synthetic set to {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Synth(args) => match synth(args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        },
    }
}
