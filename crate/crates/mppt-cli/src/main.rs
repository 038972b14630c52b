//! Experiment runner for the mppt stance-detection pipeline.
//!
//! Every verb reads the same TOML run configuration; command-line flags
//! override individual fields. Exit codes: 0 success, 2 validation error,
//! 3 backend failure, 4 partial completion.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use mppt::harness::{self, report, Ablation, HarnessError, RunConfig, RunResult};
use mppt::tscot::LlmBackendConfig;

#[derive(Parser, Debug)]
#[command(name = "mppt", version, about = "Cross-target stance detection experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration file (TOML). Required by every verb except
    /// `report`.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// LLM response cache directory override.
    #[arg(long, global = true, value_name = "DIR")]
    cache_dir: Option<PathBuf>,

    /// Use the deterministic mock backend, loading optional canned
    /// responses from this fixtures directory.
    #[arg(long, global = true, value_name = "FIXTURES")]
    mock_llm: Option<PathBuf>,

    /// Perspectives per target (γ) override.
    #[arg(long, global = true)]
    gamma: Option<usize>,

    /// Learning rate override.
    #[arg(long, global = true)]
    lr: Option<f64>,

    /// Batch size override.
    #[arg(long, global = true)]
    batch_size: Option<usize>,

    /// Epoch count override.
    #[arg(long, global = true)]
    epochs: Option<usize>,

    /// Ablation override: none, no_tscot, or no_senticnet.
    #[arg(long, global = true)]
    ablation: Option<Ablation>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Elicit the perspective sets (stage one) and print them.
    Elicit,
    /// Generate the full NLE corpus: perspectives plus one explanation per
    /// example and perspective (stages one and two).
    Explain,
    /// Fine-tune on the task's source side and evaluate on the destination.
    Train,
    /// Evaluate an existing checkpoint on the task's eval partition.
    Eval {
        /// Checkpoint directory; defaults to the config's checkpoints path.
        #[arg(long, value_name = "DIR")]
        checkpoint: Option<PathBuf>,
    },
    /// Run the full model and both ablations with a shared seed.
    Ablate,
    /// One full run per γ in [from, to], each with fresh elicitation.
    Sweep {
        #[arg(long, default_value_t = 2)]
        from: usize,
        #[arg(long, default_value_t = 8)]
        to: usize,
    },
    /// Render tables and plot data from stored run records.
    Report {
        /// run_result.json files, or directories to scan for them.
        #[arg(required = true, value_name = "RESULTS")]
        inputs: Vec<PathBuf>,
        /// Output directory for the bundle.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, HarnessError> {
    let path = common.config.as_ref().ok_or_else(|| HarnessError::Config {
        reason: "--config <PATH> is required for this command".to_string(),
    })?;
    let mut config = RunConfig::from_path(path)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(dir) = &common.cache_dir {
        config.paths.cache = dir.clone();
    }
    if let Some(fixtures) = &common.mock_llm {
        config.llm = LlmBackendConfig::mock(fixtures);
    }
    if let Some(gamma) = common.gamma {
        config.gamma = gamma;
    }
    if let Some(lr) = common.lr {
        config.optimizer.lr = lr;
    }
    if let Some(batch_size) = common.batch_size {
        config.optimizer.batch_size = batch_size;
    }
    if let Some(epochs) = common.epochs {
        config.optimizer.epochs = epochs;
    }
    if let Some(ablation) = common.ablation {
        config.ablation = ablation;
    }
    let config = config.normalized();
    config.validate()?;
    Ok(config)
}

fn print_run(result: &RunResult) {
    print!("{}", report::render_results_table(std::slice::from_ref(result)));
    if let Some(diag) = &result.llm_judgment_report {
        println!(
            "diagnostic LLM-judgment-only macro F1(A): {:.4} (TsCoT output quality check, \
             not a model metric)",
            diag.macro_favor_against
        );
    }
    println!("checkpoint: {}", result.config.paths.checkpoints.display());
    println!("reports:    {}", result.config.paths.reports.display());
}

fn collect_results(inputs: &[PathBuf]) -> Result<Vec<RunResult>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let before = files.len();
            scan_for_records(input, &mut files)?;
            anyhow::ensure!(
                files.len() > before,
                "no run_result.json found under {}",
                input.display()
            );
        } else {
            files.push(input.clone());
        }
    }
    files.sort();
    files.dedup();
    let mut results = Vec::new();
    for file in files {
        let text = std::fs::read_to_string(&file)
            .with_context(|| format!("reading {}", file.display()))?;
        let result: RunResult =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", file.display()))?;
        results.push(result);
    }
    Ok(results)
}

fn scan_for_records(dir: &Path, files: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("scanning {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            scan_for_records(&path, files)?;
        } else if path.file_name().is_some_and(|n| n == "run_result.json") {
            files.push(path);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Elicit => {
            let config = load_config(&cli.common)?;
            if config.ablation == Ablation::NoTscot {
                println!("ablation no_tscot: nothing to elicit");
                return Ok(());
            }
            let psets = harness::prepare_perspectives(&config)?;
            for pset in &psets {
                println!("{} (gamma {}):", pset.target, pset.gamma);
                for (i, p) in pset.perspectives.iter().enumerate() {
                    println!("  {}. {p}", i + 1);
                }
            }
            Ok(())
        }
        Command::Explain => {
            let config = load_config(&cli.common)?;
            let prepared = harness::prepare_nles(&config)?;
            match &prepared.path {
                None => println!("ablation no_tscot: no NLE corpus needed"),
                Some(path) => println!(
                    "NLE corpus written to {} ({} backend calls, sha256 {})",
                    path.display(),
                    prepared.llm_calls,
                    prepared.corpus_sha256.as_deref().unwrap_or("-"),
                ),
            }
            Ok(())
        }
        Command::Train => {
            let config = load_config(&cli.common)?;
            let result = harness::execute_run(&config)?;
            print_run(&result);
            Ok(())
        }
        Command::Eval { checkpoint } => {
            let config = load_config(&cli.common)?;
            let dir = checkpoint.unwrap_or_else(|| config.paths.checkpoints.clone());
            let outcome = harness::evaluate_run(&dir, &config)?;
            println!("eval examples: {}", outcome.report.n_examples);
            for (label, f1) in &outcome.report.per_class_f1 {
                println!("F1 {label}: {f1:.4}");
            }
            println!("macro F1(A):   {:.4}", outcome.report.macro_favor_against);
            println!("macro F1(all): {:.4}", outcome.report.macro_all);
            if let Some(diag) = &outcome.llm_judgment_report {
                println!(
                    "diagnostic LLM-judgment-only macro F1(A): {:.4} (TsCoT output quality \
                     check, not a model metric)",
                    diag.macro_favor_against
                );
            }
            println!("predictions: {}", outcome.predictions_path.display());
            Ok(())
        }
        Command::Ablate => {
            let config = load_config(&cli.common)?;
            let results = harness::run_ablations(&config)?;
            print!("{}", report::render_ablation_table(&results));
            println!("table: {}", config.paths.reports.join("ablation_table.txt").display());
            Ok(())
        }
        Command::Sweep { from, to } => {
            let config = load_config(&cli.common)?;
            let results = harness::gamma_sweep(&config, from, to)?;
            print!("{}", report::render_gamma_series(&results));
            println!("series: {}", config.paths.reports.join("gamma_sweep.tsv").display());
            Ok(())
        }
        Command::Report { inputs, out } => {
            let results = collect_results(&inputs)?;
            let written = report::write_report_bundle(&out, &results)?;
            print!("{}", report::render_results_table(&results));
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err:#}");
            let code = err.downcast_ref::<HarnessError>().map_or(2, HarnessError::exit_code);
            ExitCode::from(u8::try_from(code).unwrap_or(1))
        }
    }
}
