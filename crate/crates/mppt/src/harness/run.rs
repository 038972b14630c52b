//! Run execution: NLE preparation, the fine-tuning loop, evaluation, and
//! the ablation / γ-sweep drivers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    build_task, evaluate, load_dataset, normalize_target, EvalReport, Example, StanceLabel,
    TaskPartition,
};
use crate::multipln::checkpoint::{self, CheckpointMeta};
use crate::multipln::{
    apply_step, AdamW, AdamWConfig, Backbone, Model, ModelGrads, MultiplnError, PromptBuilder,
    PromptInstance, WordPieceTokenizer,
};
use crate::synthetic;
use crate::tscot::{
    elicit_perspectives, generate_explanations, read_nle_corpus, write_nle_corpus, CacheStore,
    NleCorpus, PerspectiveSet, GAMMA_RANGE,
};
use crate::verbalizer::{base_verbalizer, expand, materialize, AggregateMode, Lexicon};

use super::report;
use super::{Ablation, HarnessError, RunConfig, SeedStreams};

/// Backend requests in flight during explanation generation.
const NLE_PARALLELISM: usize = 4;

/// Sentinel backbone id for the seeded compact configuration.
pub const SYNTHETIC_BACKBONE_ID: &str = "synthetic-compact";

/// Outcome of [`prepare_nles`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedNles {
    /// Corpus location; `None` under the NO_TSCOT ablation.
    pub path: Option<PathBuf>,
    /// Backend completions actually issued (cache hits excluded).
    pub llm_calls: u64,
    pub corpus_sha256: Option<String>,
}

/// Input hashes and seed streams that pin a run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProvenance {
    pub nle_corpus_sha256: Option<String>,
    /// Digest of the selected checkpoint's weight container.
    pub checkpoint_sha256: String,
    pub llm_calls: u64,
    pub seeds: SeedStreams,
}

/// Everything one run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: RunConfig,
    pub train_report: EvalReport,
    /// Present only when the dataset carries a dev split.
    pub dev_report: Option<EvalReport>,
    /// Evaluation-partition metrics of the selected checkpoint.
    pub report: EvalReport,
    /// Diagnostic only: majority vote over the LLM's own trailing
    /// judgments. Not a model metric.
    pub llm_judgment_report: Option<EvalReport>,
    pub training_curve: Vec<(u64, f64)>,
    pub wall_time_secs: f64,
    pub provenance: RunProvenance,
}

/// Outcome of [`evaluate_run`].
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub llm_judgment_report: Option<EvalReport>,
    pub predictions_path: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

fn sha256_file(path: &Path) -> Result<String, HarnessError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn load_partition(config: &RunConfig) -> Result<TaskPartition, HarnessError> {
    let spec = config.task_spec()?;
    let dataset = load_dataset(&config.paths.data)?;
    if dataset.summary.rejected() > 0 {
        log::warn!(
            "{} of {} rows rejected while loading {}",
            dataset.summary.rejected(),
            dataset.summary.total_rows,
            config.paths.data.display()
        );
    }
    Ok(build_task(&dataset.examples, &spec)?)
}

/// All task examples bucketed by normalized target.
fn target_groups(partition: &TaskPartition) -> BTreeMap<String, Vec<Example>> {
    let mut groups: BTreeMap<String, Vec<Example>> = BTreeMap::new();
    for ex in partition.train.iter().chain(&partition.dev).chain(&partition.eval) {
        groups.entry(normalize_target(&ex.target)).or_default().push(ex.clone());
    }
    groups
}

/// Stage one only: elicit a perspective set per task target (through the
/// cache) without generating explanations.
pub fn prepare_perspectives(config: &RunConfig) -> Result<Vec<PerspectiveSet>, HarnessError> {
    let config = config.clone().normalized();
    config.validate()?;
    if config.ablation == Ablation::NoTscot {
        return Ok(Vec::new());
    }
    let partition = load_partition(&config)?;
    let backend = config.llm.build()?;
    let cache = CacheStore::open(&config.paths.cache)?;
    let mut psets = Vec::new();
    for group in target_groups(&partition).values() {
        psets.push(elicit_perspectives(&group[0].target, config.gamma, backend.as_ref(), &cache)?);
    }
    Ok(psets)
}

/// Elicit perspectives and explanations for every example in the task
/// (train, dev, and eval — inference-time prompts need NLEs too) and write
/// the corpus. Cache-first: a re-invocation issues zero backend calls.
/// Skipped entirely under NO_TSCOT.
pub fn prepare_nles(config: &RunConfig) -> Result<PreparedNles, HarnessError> {
    let config = config.clone().normalized();
    config.validate()?;
    if config.ablation == Ablation::NoTscot {
        log::info!("ablation no_tscot: skipping NLE preparation, backend never contacted");
        return Ok(PreparedNles { path: None, llm_calls: 0, corpus_sha256: None });
    }
    let partition = load_partition(&config)?;
    let backend = config.llm.build()?;
    let cache = CacheStore::open(&config.paths.cache)?;

    let groups = target_groups(&partition);
    let mut psets = Vec::new();
    let mut explanations = Vec::new();
    for group in groups.values() {
        let target = group[0].target.clone();
        let pset = elicit_perspectives(&target, config.gamma, backend.as_ref(), &cache)?;
        explanations.extend(generate_explanations(
            group,
            &pset,
            backend.as_ref(),
            &cache,
            NLE_PARALLELISM,
        )?);
        psets.push(pset);
    }
    let corpus = NleCorpus { gamma: config.gamma, psets, explanations };
    write_nle_corpus(&config.paths.nle_corpus, &corpus)?;
    let digest = sha256_file(&config.paths.nle_corpus)?;
    log::info!(
        "nle corpus at {}: {} rows across {} targets, {} backend calls",
        config.paths.nle_corpus.display(),
        corpus.explanations.len(),
        corpus.psets.len(),
        backend.calls_made()
    );
    Ok(PreparedNles {
        path: Some(config.paths.nle_corpus.clone()),
        llm_calls: backend.calls_made(),
        corpus_sha256: Some(digest),
    })
}

/// Read the NLE corpus a run needs; `None` under NO_TSCOT.
fn load_corpus(config: &RunConfig) -> Result<Option<NleCorpus>, HarnessError> {
    if config.ablation == Ablation::NoTscot {
        return Ok(None);
    }
    let path = &config.paths.nle_corpus;
    if !path.is_file() {
        return Err(HarnessError::MissingNles {
            reason: format!("{} not found; run `elicit`/`explain` first", path.display()),
        });
    }
    let corpus = read_nle_corpus(path)?;
    if corpus.gamma != config.gamma {
        return Err(HarnessError::MissingNles {
            reason: format!(
                "corpus at {} was generated for gamma {}, run requires {}",
                path.display(),
                corpus.gamma,
                config.gamma
            ),
        });
    }
    Ok(Some(corpus))
}

struct ResolvedModel {
    model: Model<f32>,
    tokenizer: WordPieceTokenizer,
    max_prompt_len: usize,
}

/// Build the starting model for `config`: the seeded compact backbone, or a
/// checkpoint directory to continue from. In both cases the verbalizer is
/// re-materialized under the run's expansion limit.
fn resolve_model(config: &RunConfig, seeds: &SeedStreams) -> Result<ResolvedModel, HarnessError> {
    let expanded = expand(&base_verbalizer(), &Lexicon::bundled(), config.expansion_limit);
    if config.backbone_id == SYNTHETIC_BACKBONE_ID {
        let tokenizer = WordPieceTokenizer::new(synthetic::vocab(), true)?;
        let bconfig = synthetic::compact_backbone_config(tokenizer.vocab_size());
        let backbone = Backbone::init(&bconfig, seeds.backbone_init)?;
        let units = materialize(&expanded, &tokenizer)?;
        let model = Model::new(backbone, units, AggregateMode::Sum, seeds.query_init, false)?;
        let max_prompt_len = synthetic::MAX_PROMPT_LEN.min(bconfig.max_position);
        return Ok(ResolvedModel { model, tokenizer, max_prompt_len });
    }
    let dir = Path::new(&config.backbone_id);
    if !dir.join(checkpoint::META_FILE).is_file() {
        return Err(HarnessError::BackboneUnavailable {
            id: config.backbone_id.clone(),
            reason: format!(
                "expected `{SYNTHETIC_BACKBONE_ID}` or a checkpoint directory; \
                 see the README for converting a pretrained masked LM"
            ),
        });
    }
    let (loaded, tokenizer, meta, _) = checkpoint::load(dir)?;
    let units = materialize(&expanded, &tokenizer)?;
    let model = Model::from_parts(
        loaded.backbone,
        loaded.query,
        loaded.query_seed,
        units,
        loaded.mode,
        loaded.freeze_units,
    )?;
    let max_prompt_len = meta.max_prompt_len.min(meta.backbone.max_position);
    Ok(ResolvedModel { model, tokenizer, max_prompt_len })
}

/// Build each example's prompt set: γ perspective prompts, or a single
/// reduced-template prompt under NO_TSCOT.
fn prompts_for_examples(
    builder: &PromptBuilder,
    examples: &[Example],
    corpus: Option<&NleCorpus>,
) -> Result<Vec<Vec<PromptInstance>>, HarnessError> {
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        match corpus {
            None => out.push(vec![builder.build_plain(&ex.id, &ex.text, &ex.target)?]),
            Some(corpus) => {
                let pset =
                    corpus.pset_for(&ex.target).ok_or_else(|| HarnessError::MissingNles {
                        reason: format!(
                            "no perspective set for target `{}` in the NLE corpus",
                            ex.target
                        ),
                    })?;
                let prompts =
                    builder.prompts_for(ex, pset, &corpus.explanations).map_err(|e| match e {
                        MultiplnError::MissingExplanation { example_id, perspective_index } => {
                            HarnessError::MissingNles {
                                reason: format!(
                                    "example `{example_id}` has no explanation for perspective \
                                     {perspective_index}"
                                ),
                            }
                        }
                        other => HarnessError::Multipln(other),
                    })?;
                out.push(prompts);
            }
        }
    }
    Ok(out)
}

struct PredictionRow {
    example_id: String,
    yhat: [f64; 3],
    predicted: StanceLabel,
    alpha: Vec<f64>,
}

fn eval_model(
    model: &Model<f32>,
    prompt_sets: &[Vec<PromptInstance>],
    examples: &[Example],
) -> Result<(EvalReport, Vec<PredictionRow>), HarnessError> {
    let mut gold = Vec::with_capacity(examples.len());
    let mut pred = Vec::with_capacity(examples.len());
    let mut rows = Vec::with_capacity(examples.len());
    for (ex, prompts) in examples.iter().zip(prompt_sets) {
        let label = ex.label.ok_or_else(|| HarnessError::Config {
            reason: format!("example `{}` is unlabeled; metrics need gold labels", ex.id),
        })?;
        let output = model.forward(prompts);
        gold.push(label);
        pred.push(output.predicted());
        rows.push(PredictionRow {
            example_id: ex.id.clone(),
            yhat: [f64::from(output.yhat[0]), f64::from(output.yhat[1]), f64::from(output.yhat[2])],
            predicted: output.predicted(),
            alpha: output.alpha.iter().map(|&a| f64::from(a)).collect(),
        });
    }
    Ok((evaluate(&gold, &pred)?, rows))
}

fn write_predictions(
    path: &Path,
    rows: &[PredictionRow],
    gamma: usize,
) -> Result<(), HarnessError> {
    let mut out = String::from("example_id\tyhat_favor\tyhat_against\tyhat_none\tpredicted_label");
    for i in 1..=gamma {
        out.push_str(&format!("\talpha_{i}"));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}",
            row.example_id, row.yhat[0], row.yhat[1], row.yhat[2], row.predicted
        ));
        for a in &row.alpha {
            out.push_str(&format!("\t{a:.6}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// Majority vote over the LLM's trailing judgments, scored like a
/// classifier. Diagnostic signal on TsCoT output quality only.
fn llm_judgment_report(examples: &[Example], corpus: &NleCorpus) -> Option<EvalReport> {
    let index = corpus.index();
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for ex in examples {
        let Some(label) = ex.label else { continue };
        let mut counts = [0usize; 3];
        for k in 0..corpus.gamma {
            if let Some(e) = index.get(&(ex.id.as_str(), k)) {
                if let Some(j) = e.llm_judgment {
                    counts[j.index()] += 1;
                }
            }
        }
        if counts.iter().all(|&c| c == 0) {
            continue;
        }
        let best = (0..3).max_by_key(|&i| (counts[i], 3 - i)).expect("non-empty");
        gold.push(label);
        pred.push(StanceLabel::from_index(best));
    }
    if gold.is_empty() {
        return None;
    }
    evaluate(&gold, &pred).ok()
}

fn scale_grads(grads: &mut ModelGrads<f32>, factor: f32) {
    for (_, _, slot) in grads.backbone.slots_mut() {
        for v in slot {
            *v *= factor;
        }
    }
    grads.query.mapv_inplace(|v| v * factor);
}

fn make_meta(
    config: &RunConfig,
    model: &Model<f32>,
    lowercase: bool,
    max_prompt_len: usize,
    step: u64,
) -> CheckpointMeta {
    CheckpointMeta {
        backbone_id: config.backbone_id.clone(),
        backbone: model.backbone.config.clone(),
        gamma: config.gamma,
        seed: config.seed,
        query_seed: model.query_seed,
        ablation: config.ablation.label().to_string(),
        aggregate_mode: model.mode,
        freeze_units: model.freeze_units,
        lowercase,
        max_prompt_len,
        step,
    }
}

/// Prepare NLEs, fine-tune, evaluate, and persist every artifact for one
/// config. The returned result is also written to
/// `paths.reports/run_result.json`.
pub fn execute_run(config: &RunConfig) -> Result<RunResult, HarnessError> {
    let config = config.clone().normalized();
    config.validate()?;
    let started = Instant::now();
    let seeds = config.seeds();
    log::info!(
        "run: task={} gamma={} ablation={} seed={} (streams: data_order={:016x} \
         query_init={:016x} dropout={:016x} backbone_init={:016x})",
        config.task,
        config.gamma,
        config.ablation.label(),
        config.seed,
        seeds.data_order,
        seeds.query_init,
        seeds.dropout,
        seeds.backbone_init,
    );
    let prepared = prepare_nles(&config)?;
    train_and_evaluate(&config, &seeds, &prepared, started)
}

fn train_and_evaluate(
    config: &RunConfig,
    seeds: &SeedStreams,
    prepared: &PreparedNles,
    started: Instant,
) -> Result<RunResult, HarnessError> {
    let partition = load_partition(config)?;
    if let Some(ex) = partition.train.iter().find(|e| e.label.is_none()) {
        return Err(HarnessError::Config {
            reason: format!("training example `{}` is unlabeled", ex.id),
        });
    }
    let corpus = load_corpus(config)?;
    let ResolvedModel { mut model, tokenizer, max_prompt_len } = resolve_model(config, seeds)?;
    let builder = PromptBuilder::new(tokenizer, max_prompt_len);
    let train_prompts = prompts_for_examples(&builder, &partition.train, corpus.as_ref())?;
    let dev_prompts = prompts_for_examples(&builder, &partition.dev, corpus.as_ref())?;
    let eval_prompts = prompts_for_examples(&builder, &partition.eval, corpus.as_ref())?;

    let opt_config = AdamWConfig { lr: config.optimizer.lr, ..AdamWConfig::default() };
    let mut opt = AdamW::new(opt_config, &model.slot_lens());
    let mut grads = model.zero_grads();
    let mut data_rng = ChaCha8Rng::seed_from_u64(seeds.data_order);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seeds.dropout);
    let mut curve: Vec<(u64, f64)> = Vec::new();
    let mut step: u64 = 0;
    let select_on_dev = !partition.dev.is_empty();
    let mut best_dev: Option<f64> = None;
    let mut dev_report: Option<EvalReport> = None;
    let mut indices: Vec<usize> = (0..partition.train.len()).collect();

    for epoch in 0..config.optimizer.epochs {
        indices.shuffle(&mut data_rng);
        let mut epoch_loss = 0.0;
        for batch in indices.chunks(config.optimizer.batch_size) {
            grads.zero();
            let mut batch_loss = 0.0f64;
            for &i in batch {
                let fwd = model.forward_train(&train_prompts[i], Some(&mut dropout_rng));
                let gold = partition.train[i].label.expect("checked above");
                batch_loss += f64::from(model.loss(&fwd.output, gold));
                model.backward(&fwd, gold, &mut grads);
            }
            batch_loss /= batch.len() as f64;
            step += 1;
            if !batch_loss.is_finite() {
                let tail: Vec<&(u64, f64)> = curve.iter().rev().take(5).collect();
                log::error!("loss {batch_loss} at step {step}; last steps: {tail:?}");
                return Err(HarnessError::Divergence { step, loss: batch_loss });
            }
            scale_grads(&mut grads, 1.0 / batch.len() as f32);
            apply_step(&mut model, &grads, &mut opt);
            curve.push((step, batch_loss));
            epoch_loss += batch_loss;
        }
        let batches = indices.len().div_ceil(config.optimizer.batch_size);
        log::info!("epoch {}: mean loss {:.6}", epoch + 1, epoch_loss / batches as f64);
        if select_on_dev {
            let (report, _) = eval_model(&model, &dev_prompts, &partition.dev)?;
            let metric = report.macro_favor_against;
            if best_dev.is_none_or(|b| metric > b) {
                log::info!("new best dev macro F1(A) {metric:.4} at epoch {}", epoch + 1);
                best_dev = Some(metric);
                dev_report = Some(report);
                let meta = make_meta(
                    config,
                    &model,
                    builder.tokenizer().lowercase(),
                    max_prompt_len,
                    step,
                );
                checkpoint::save(
                    &config.paths.checkpoints,
                    &model,
                    builder.tokenizer(),
                    &meta,
                    Some(&opt),
                )?;
            }
        }
    }
    if select_on_dev {
        // Evaluate the best-dev snapshot, not the final epoch.
        let (best, _, _, _) = checkpoint::load(&config.paths.checkpoints)?;
        model = best;
    } else {
        let meta = make_meta(config, &model, builder.tokenizer().lowercase(), max_prompt_len, step);
        checkpoint::save(
            &config.paths.checkpoints,
            &model,
            builder.tokenizer(),
            &meta,
            Some(&opt),
        )?;
    }

    let (train_report, _) = eval_model(&model, &train_prompts, &partition.train)?;
    let (report, rows) = eval_model(&model, &eval_prompts, &partition.eval)?;
    std::fs::create_dir_all(&config.paths.reports).map_err(io_err(&config.paths.reports))?;
    write_predictions(&config.paths.reports.join("predictions.tsv"), &rows, config.gamma)?;
    let llm_judgments = corpus.as_ref().and_then(|c| llm_judgment_report(&partition.eval, c));
    let checkpoint_sha = sha256_file(&config.paths.checkpoints.join(checkpoint::MODEL_FILE))?;
    let result = RunResult {
        config: config.clone(),
        train_report,
        dev_report,
        report,
        llm_judgment_report: llm_judgments,
        training_curve: curve,
        wall_time_secs: started.elapsed().as_secs_f64(),
        provenance: RunProvenance {
            nle_corpus_sha256: prepared.corpus_sha256.clone(),
            checkpoint_sha256: checkpoint_sha,
            llm_calls: prepared.llm_calls,
            seeds: *seeds,
        },
    };
    let record_path = config.paths.reports.join("run_result.json");
    let json = serde_json::to_string_pretty(&result)
        .map_err(|source| HarnessError::Json { what: "run result".to_string(), source })?;
    std::fs::write(&record_path, json).map_err(io_err(&record_path))?;
    log::info!(
        "run finished in {:.1}s: train macro F1(A) {:.4}, eval macro F1(A) {:.4}",
        result.wall_time_secs,
        result.train_report.macro_favor_against,
        result.report.macro_favor_against
    );
    Ok(result)
}

/// Evaluate an existing checkpoint on the config's eval partition; writes a
/// predictions TSV next to the other report artifacts.
pub fn evaluate_run(
    checkpoint_dir: &Path,
    config: &RunConfig,
) -> Result<EvalOutcome, HarnessError> {
    let config = config.clone().normalized();
    config.validate()?;
    let partition = load_partition(&config)?;
    let corpus = load_corpus(&config)?;
    let (model, tokenizer, meta, _) = checkpoint::load(checkpoint_dir)?;
    if meta.gamma != config.gamma {
        return Err(HarnessError::Config {
            reason: format!(
                "checkpoint was trained at gamma {}, config says {}",
                meta.gamma, config.gamma
            ),
        });
    }
    let builder =
        PromptBuilder::new(tokenizer, meta.max_prompt_len.min(meta.backbone.max_position));
    let eval_prompts = prompts_for_examples(&builder, &partition.eval, corpus.as_ref())?;
    let (report, rows) = eval_model(&model, &eval_prompts, &partition.eval)?;
    std::fs::create_dir_all(&config.paths.reports).map_err(io_err(&config.paths.reports))?;
    let predictions_path = config.paths.reports.join("predictions.tsv");
    write_predictions(&predictions_path, &rows, config.gamma)?;
    let llm_judgments = corpus.as_ref().and_then(|c| llm_judgment_report(&partition.eval, c));
    Ok(EvalOutcome { report, llm_judgment_report: llm_judgments, predictions_path })
}

/// Execute the full model and both ablations with a shared seed and data,
/// writing a comparison table to the base reports directory. Artifacts land
/// in per-variant subdirectories.
pub fn run_ablations(base: &RunConfig) -> Result<Vec<RunResult>, HarnessError> {
    if base.ablation != Ablation::None {
        return Err(HarnessError::Config {
            reason: "run_ablations starts from an `ablation = none` config".to_string(),
        });
    }
    let base = base.clone().normalized();
    base.validate()?;
    let mut results = Vec::with_capacity(Ablation::ALL.len());
    for ablation in Ablation::ALL {
        let mut cfg = base.clone();
        cfg.ablation = ablation;
        cfg.paths.checkpoints = base.paths.checkpoints.join(ablation.label());
        cfg.paths.reports = base.paths.reports.join(ablation.label());
        // NONE and NO_SENTICNET share the corpus (same γ, same
        // instructions); NO_TSCOT never touches it.
        results.push(execute_run(&cfg)?);
    }
    std::fs::create_dir_all(&base.paths.reports).map_err(io_err(&base.paths.reports))?;
    let table = report::render_ablation_table(&results);
    let table_path = base.paths.reports.join("ablation_table.txt");
    std::fs::write(&table_path, &table).map_err(io_err(&table_path))?;
    log::info!("ablation comparison:\n{table}");
    Ok(results)
}

fn gamma_corpus_path(base: &Path, gamma: usize) -> PathBuf {
    let stem = base.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
    let ext = base.extension().map(|s| s.to_string_lossy().to_string());
    let name = match ext {
        Some(ext) => format!("{stem}.gamma-{gamma}.{ext}"),
        None => format!("{stem}.gamma-{gamma}"),
    };
    base.with_file_name(name)
}

/// One full run per γ in `[lo, hi]`, each with fresh perspective elicitation
/// (the stage-one instruction embeds γ, so corpora are not shared across
/// sweep points). Writes the (γ, metric) series for plotting.
pub fn gamma_sweep(base: &RunConfig, lo: usize, hi: usize) -> Result<Vec<RunResult>, HarnessError> {
    if base.ablation != Ablation::None {
        return Err(HarnessError::Config {
            reason: "gamma_sweep requires an `ablation = none` config".to_string(),
        });
    }
    if lo > hi || !GAMMA_RANGE.contains(&lo) || !GAMMA_RANGE.contains(&hi) {
        return Err(HarnessError::Config {
            reason: format!(
                "sweep range [{lo}, {hi}] must be non-empty and within [{}, {}]",
                GAMMA_RANGE.start(),
                GAMMA_RANGE.end()
            ),
        });
    }
    let base = base.clone().normalized();
    base.validate()?;
    let mut results = Vec::with_capacity(hi - lo + 1);
    for gamma in lo..=hi {
        let tag = format!("gamma-{gamma}");
        let mut cfg = base.clone();
        cfg.gamma = gamma;
        cfg.paths.nle_corpus = gamma_corpus_path(&base.paths.nle_corpus, gamma);
        cfg.paths.checkpoints = base.paths.checkpoints.join(&tag);
        cfg.paths.reports = base.paths.reports.join(&tag);
        results.push(execute_run(&cfg)?);
    }
    std::fs::create_dir_all(&base.paths.reports).map_err(io_err(&base.paths.reports))?;
    let series = report::render_gamma_series(&results);
    let series_path = base.paths.reports.join("gamma_sweep.tsv");
    std::fs::write(&series_path, &series).map_err(io_err(&series_path))?;
    Ok(results)
}
