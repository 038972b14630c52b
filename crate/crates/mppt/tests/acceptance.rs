//! Acceptance gate: ten independently-checkable properties of the pipeline,
//! one test per criterion, each printing a single PASS line (run with
//! `cargo test --test acceptance -- --nocapture` to see them).
//!
//! Oracles here are written from scratch — they deliberately do not call the
//! library code paths they check.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use mppt::corpus::{evaluate, StanceLabel};
use mppt::harness::{
    execute_run, gamma_sweep, prepare_nles, run_ablations, Ablation, OptimizerSection,
    PathsSection, RunConfig, SYNTHETIC_BACKBONE_ID,
};
use mppt::multipln::head;
use mppt::multipln::{Backbone, Model, PromptBuilder, WordPieceTokenizer};
use mppt::synthetic;
use mppt::tscot::{
    elicit_perspectives, generate_explanations, parse_explanation, parse_perspectives, CacheStore,
    LlmBackend, LlmBackendConfig, MockBackend, Sampling,
};
use mppt::verbalizer::{
    aggregate_mu, base_verbalizer, expand, materialize, AggregateMode, Lexicon,
};

fn pass(n: usize, detail: &str) {
    println!("criterion {n:02} PASS — {detail}");
}

// ---------------------------------------------------------------------------
// 1. Metric oracle
// ---------------------------------------------------------------------------

/// Independent F1 computation: per-class precision/recall from raw counts.
fn brute_force_f1(gold: &[StanceLabel], pred: &[StanceLabel]) -> ([f64; 3], f64, f64) {
    let mut f1 = [0.0f64; 3];
    for (c, label) in StanceLabel::ALL.iter().enumerate() {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        for (g, p) in gold.iter().zip(pred) {
            match (g == label, p == label) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fn_ += 1.0,
                (false, false) => {}
            }
        }
        let denom = 2.0 * tp + fp + fn_;
        f1[c] = if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    (f1, (f1[0] + f1[1]) / 2.0, (f1[0] + f1[1] + f1[2]) / 3.0)
}

#[test]
fn criterion_01_metric_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF1);
    for case in 0..1000 {
        let n = rng.random_range(1..=64);
        let gold: Vec<StanceLabel> =
            (0..n).map(|_| StanceLabel::from_index(rng.random_range(0..3))).collect();
        let pred: Vec<StanceLabel> =
            (0..n).map(|_| StanceLabel::from_index(rng.random_range(0..3))).collect();
        let report = evaluate(&gold, &pred).expect("labeled pairs evaluate");
        let (f1, macro_fa, macro_all) = brute_force_f1(&gold, &pred);
        for (c, label) in StanceLabel::ALL.iter().enumerate() {
            assert!(
                (report.per_class_f1[label] - f1[c]).abs() <= 1e-12,
                "criterion 01 FAIL: case {case} F1({label}) {} vs oracle {}",
                report.per_class_f1[label],
                f1[c],
            );
        }
        assert!(
            (report.macro_favor_against - macro_fa).abs() <= 1e-12,
            "criterion 01 FAIL: case {case} macro F1(A)"
        );
        assert!(
            (report.macro_all - macro_all).abs() <= 1e-12,
            "criterion 01 FAIL: case {case} macro F1(all)"
        );
        assert_eq!(report.n_examples, n, "criterion 01 FAIL: case {case} n_examples");
        let counted: u64 = report.counts.iter().flatten().sum();
        assert_eq!(counted as usize, n, "criterion 01 FAIL: case {case} confusion total");
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "criterion 01 FAIL: took {elapsed:?}");
    pass(1, &format!("evaluate matches brute-force F1 on 1000 random pairs ≤1e-12 in {elapsed:?}"));
}

// ---------------------------------------------------------------------------
// 2. Fusion correctness
// ---------------------------------------------------------------------------

fn oracle_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / z).collect()
}

#[test]
fn criterion_02_fusion_correctness() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF2);
    for case in 0..1000 {
        let d = rng.random_range(1..=16);
        let gamma = rng.random_range(1..=8);
        let r: Array2<f64> = Array2::from_shape_fn((gamma, d), |_| rng.random_range(-3.0..3.0));
        let h: Array1<f64> = Array1::from_shape_fn(d, |_| rng.random_range(-3.0..3.0));
        let (alpha, e) = head::fuse(&r.view(), &h.view());

        assert!(alpha.iter().all(|&a| a >= 0.0), "criterion 02 FAIL: case {case} negative weight");
        assert!(
            (alpha.sum() - 1.0).abs() <= 1e-6,
            "criterion 02 FAIL: case {case} weights sum to {}",
            alpha.sum()
        );

        let scores: Vec<f64> = (0..gamma).map(|t| r.row(t).dot(&h)).collect();
        let alpha_oracle = oracle_softmax(&scores);
        for t in 0..gamma {
            assert!(
                (alpha[t] - alpha_oracle[t]).abs() <= 1e-6,
                "criterion 02 FAIL: case {case} alpha[{t}]"
            );
        }
        for j in 0..d {
            let hand: f64 = (0..gamma).map(|t| alpha_oracle[t] * r[[t, j]]).sum();
            assert!(
                (e[j] - hand).abs() <= 1e-6,
                "criterion 02 FAIL: case {case} e[{j}] {} vs hand-rolled {hand}",
                e[j]
            );
        }
    }

    // Hand example: h = (1, 0), stance vectors (2, 0) and (0, 2) give
    // scores (2, 0), so the first weight is e²/(e²+1) ≈ 0.8808.
    let r: Array2<f64> = ndarray::array![[2.0, 0.0], [0.0, 2.0]];
    let h: Array1<f64> = ndarray::array![1.0, 0.0];
    let (alpha, _) = head::fuse(&r.view(), &h.view());
    assert!(
        (alpha[0] - 0.8808).abs() <= 5e-5 && (alpha[1] - 0.1192).abs() <= 5e-5,
        "criterion 02 FAIL: hand example gave ({:.6}, {:.6})",
        alpha[0],
        alpha[1]
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "criterion 02 FAIL: took {elapsed:?}");
    pass(2, &format!("fusion oracle holds on 1000 draws; hand example to 4 decimals; {elapsed:?}"));
}

// ---------------------------------------------------------------------------
// 3. Gradient check
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_gradient_check() {
    let started = Instant::now();
    let eps = 1e-6;
    let check = |a: f64, n: f64, what: &str| {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
        assert!(rel <= 1e-4, "criterion 03 FAIL: {what}: analytic {a} vs numeric {n} (rel {rel})");
    };
    for seed in 0..24u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xF30 + seed);
        let d = rng.random_range(2..=10);
        let gamma = rng.random_range(1..=6);
        let extra_units = rng.random_range(0..=6);
        let mode = if seed % 2 == 0 { AggregateMode::Sum } else { AggregateMode::Mean };

        // Fixed-feature stand-in encoder: the stance vectors r are frozen
        // random features, so the check isolates the fusion/scoring head.
        let r = Array2::from_shape_fn((gamma, d), |_| rng.random_range(-0.5..0.5));
        let mut h = Array1::from_shape_fn(d, |_| rng.random_range(-0.5..0.5));
        let mut labels = vec![0usize, 1, 2];
        labels.extend((0..extra_units).map(|_| rng.random_range(0..3)));
        let n_units = labels.len();
        let mut units = Array2::from_shape_fn((n_units, d), |_| rng.random_range(-0.5..0.5));
        let y = rng.random_range(0..3);

        let loss = |h: &Array1<f64>, units: &Array2<f64>| -> f64 {
            let trace = head::head_forward(&r.view(), &h.view(), &units.view(), &labels, 3, mode);
            head::nll(&trace.mu.view(), y)
        };
        let trace = head::head_forward(&r.view(), &h.view(), &units.view(), &labels, 3, mode);
        let grads =
            head::head_backward(&r.view(), &h.view(), &units.view(), &labels, 3, mode, &trace, y);

        for i in 0..d {
            let orig = h[i];
            h[i] = orig + eps;
            let up = loss(&h, &units);
            h[i] = orig - eps;
            let down = loss(&h, &units);
            h[i] = orig;
            check(grads.dh[i], (up - down) / (2.0 * eps), &format!("seed {seed} dh[{i}]"));
        }
        for u in 0..n_units {
            for j in 0..d {
                let orig = units[[u, j]];
                units[[u, j]] = orig + eps;
                let up = loss(&h, &units);
                units[[u, j]] = orig - eps;
                let down = loss(&h, &units);
                units[[u, j]] = orig;
                check(
                    grads.dunits[[u, j]],
                    (up - down) / (2.0 * eps),
                    &format!("seed {seed} dunits[{u},{j}]"),
                );
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "criterion 03 FAIL: took {elapsed:?}");
    pass(
        3,
        &format!("dh and dunits match central differences on 24 seeds, rel ≤1e-4, {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------
// 4. Reduction equivalence
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_reduction_equivalence() {
    let tokenizer = WordPieceTokenizer::new(synthetic::vocab(), true).unwrap();
    let config = synthetic::compact_backbone_config(tokenizer.vocab_size());
    let backbone = Backbone::<f32>::init(&config, 41).unwrap();
    let units = materialize(&base_verbalizer(), &tokenizer).unwrap();
    let token_emb: Vec<f32> = backbone
        .slots()
        .into_iter()
        .find(|(name, _, _)| name == "token_emb")
        .map(|(_, _, s)| s.to_vec())
        .unwrap();
    let unit_ids: Vec<usize> = units
        .units()
        .iter()
        .map(|u| {
            assert_eq!(u.token_ids.len(), 1, "base verbalizer words are single tokens");
            u.token_ids[0] as usize
        })
        .collect();
    let unit_labels = units.unit_label_indices();
    let model = Model::new(backbone, units, AggregateMode::Sum, 42, false).unwrap();
    let builder = PromptBuilder::new(tokenizer, synthetic::MAX_PROMPT_LEN);

    let examples = synthetic::examples();
    let d = model.hidden_dim();
    for case in 0..50 {
        let ex = &examples[case % examples.len()];
        // Past the corpus size, re-pair texts with the other target so all
        // 50 fixtures are distinct inputs.
        let target = if case < examples.len() {
            ex.target.clone()
        } else if ex.target == synthetic::SOURCE_TARGET {
            synthetic::DEST_TARGET.to_string()
        } else {
            synthetic::SOURCE_TARGET.to_string()
        };
        let prompt = builder.build_plain(&format!("fx-{case}"), &ex.text, &target).unwrap();
        let yhat = model.forward(std::slice::from_ref(&prompt)).yhat;

        // Direct single-prompt path: encode, read the mask vector, score
        // against the label-word embeddings, softmax, sum per label.
        let (hidden, _) = model.backbone.forward(&prompt.token_ids, false, None);
        let r = hidden.row(prompt.mask_position);
        let scores: Vec<f64> = unit_ids
            .iter()
            .map(|&id| (0..d).map(|j| f64::from(token_emb[id * d + j]) * f64::from(r[j])).sum())
            .collect();
        let delta = oracle_softmax(&scores);
        let mut direct = [0.0f64; 3];
        for (u, &l) in unit_labels.iter().enumerate() {
            direct[l] += delta[u];
        }
        for l in 0..3 {
            assert!(
                (f64::from(yhat[l]) - direct[l]).abs() <= 1e-6,
                "criterion 04 FAIL: fixture {case} label {l}: {} vs direct {}",
                yhat[l],
                direct[l]
            );
        }
    }
    pass(4, "γ=1 forward equals the direct single-prompt computation within 1e-6 on 50 fixtures");
}

// ---------------------------------------------------------------------------
// 5. Verbalizer properties
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_verbalizer_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF5);
    let pool: Vec<String> = (0..40).map(|i| format!("word{i}")).collect();
    for case in 0..1000 {
        // Random input verbalizer: canonical word plus a few extras per
        // label, extras drawn disjointly so construction succeeds.
        let mut deck: Vec<&String> = pool.iter().collect();
        deck.shuffle(&mut rng);
        let mut deck = deck.into_iter();
        let mut input_entries = BTreeMap::new();
        for label in StanceLabel::ALL {
            let mut words = vec![label.canonical_word().to_string()];
            words.extend(deck.by_ref().take(rng.random_range(0..=3)).cloned());
            input_entries.insert(label, words);
        }
        let input = mppt::verbalizer::Verbalizer::from_entries(input_entries, 0).unwrap();

        // Random lexicon: related lists may collide across labels and may
        // name words already present; expand must stay disjoint anyway.
        let mut lexicon = Lexicon::new();
        for (label, seed) in input.iter_words() {
            if rng.random_bool(0.8) {
                let n = rng.random_range(0..=8);
                let mut related: Vec<String> =
                    (0..n).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect();
                if rng.random_bool(0.3) {
                    let other = StanceLabel::from_index((label.index() + 1) % 3);
                    related.push(other.canonical_word().to_string());
                }
                lexicon.insert(seed, related);
            }
        }
        let limit = rng.random_range(0..=6);
        let expanded = expand(&input, &lexicon, limit);

        let mut seen = BTreeSet::new();
        for label in StanceLabel::ALL {
            let words = expanded.words(label);
            assert_eq!(words[0], label.canonical_word(), "criterion 05 FAIL: case {case}");
            assert!(
                words.len() <= input.words(label).len() + limit,
                "criterion 05 FAIL: case {case} limit exceeded"
            );
            for w in words {
                assert!(
                    seen.insert(w.to_lowercase()),
                    "criterion 05 FAIL: case {case} word `{w}` under two labels"
                );
            }
            // Monotone: expansion only adds words, every input word survives.
            let before: BTreeSet<&String> = input.words(label).iter().collect();
            let after: BTreeSet<&String> = words.iter().collect();
            assert!(
                before.is_subset(&after),
                "criterion 05 FAIL: case {case} expand dropped an input word of {label}"
            );
        }

        // Distribution property: a distribution over the words stays one
        // after per-label aggregation.
        let words: Vec<(StanceLabel, String)> =
            expanded.iter_words().map(|(l, w)| (l, w.to_string())).collect();
        let raw: Vec<f64> = (0..words.len()).map(|_| rng.random_range(0.01..1.0)).collect();
        let z: f64 = raw.iter().sum();
        let delta: BTreeMap<String, f64> =
            words.iter().zip(&raw).map(|((_, w), &v)| (w.clone(), v / z)).collect();
        for mode in [AggregateMode::Sum, AggregateMode::Mean] {
            let mu = aggregate_mu(&delta, &expanded, mode);
            let total: f64 = mu.values().sum();
            assert!(
                (total - 1.0).abs() <= 1e-9,
                "criterion 05 FAIL: case {case} {mode:?} mu sums to {total}"
            );
            assert!(mu.values().all(|&v| v >= 0.0), "criterion 05 FAIL: case {case} negative mu");
        }
    }

    let bundled = expand(&base_verbalizer(), &Lexicon::bundled(), 4);
    assert_eq!(
        bundled.words(StanceLabel::Favor),
        ["favor", "happily", "pleased", "agree", "affirmative"],
        "criterion 05 FAIL: bundled expansion"
    );
    pass(5, "disjointness, monotonicity, and distribution hold on 1000 lexicons; bundled favor → happily, pleased, agree, affirmative");
}

// ---------------------------------------------------------------------------
// 6. TsCoT robustness
// ---------------------------------------------------------------------------

fn random_fuzz_string(rng: &mut ChaCha8Rng) -> String {
    const PIECES: &[&str] = &[
        "1.",
        "2)",
        "10.",
        "-",
        "*",
        "•",
        "Judgment:",
        "judgment:",
        "favor",
        "against",
        "none",
        "(favor,against,none)",
        "The attitude",
        "perspective",
        "\n",
        "\r\n",
        "\t",
        " ",
        "..",
        ":",
        "é",
        "中文",
        "🙂",
        "\u{0}",
        "\"",
        "'",
        "[]",
        "{}",
        "1. 2. 3.",
        "Answer: yes",
    ];
    let mut s = String::new();
    for _ in 0..rng.random_range(0..40) {
        if rng.random_bool(0.5) {
            s.push_str(PIECES[rng.random_range(0..PIECES.len())]);
        } else {
            s.push(char::from_u32(rng.random_range(1..0x2000)).unwrap_or('x'));
        }
    }
    s
}

#[test]
fn criterion_06_tscot_robustness() {
    // (a) Parser fuzz: any input either parses or returns a typed error.
    let mut rng = ChaCha8Rng::seed_from_u64(0xF6);
    for _ in 0..10_000 {
        let s = random_fuzz_string(&mut rng);
        let gamma = rng.random_range(1..=8);
        let _ = parse_perspectives(&s, gamma);
        let _ = parse_explanation(&s);
    }

    // (b) Cache determinism through the full preparation pipeline.
    let dir = tempfile::tempdir().unwrap();
    let config = acceptance_config(dir.path(), 2, 1e-3, 8, 1);
    let first = prepare_nles(&config).unwrap();
    assert!(first.llm_calls > 0, "criterion 06 FAIL: first pass must hit the backend");
    let bytes = std::fs::read(first.path.as_deref().unwrap()).unwrap();
    let second = prepare_nles(&config).unwrap();
    assert_eq!(second.llm_calls, 0, "criterion 06 FAIL: second pass made backend requests");
    assert_eq!(
        std::fs::read(second.path.as_deref().unwrap()).unwrap(),
        bytes,
        "criterion 06 FAIL: outputs not byte-identical"
    );

    // (c) Completeness under fault injection: one example's explanation
    // instructions fail twice before succeeding; the grid must still fill.
    let fault_dir = tempfile::tempdir().unwrap();
    let fixtures = fault_dir.path().join("fixtures");
    std::fs::create_dir_all(&fixtures).unwrap();
    std::fs::write(
        fixtures.join("flaky.json"),
        r#"{"match": "deserves our backing", "responses": ["The wording backs the plan warmly and celebrates it. Judgment: favor."], "errors_before": 2}"#,
    )
    .unwrap();
    let backend = MockBackend::new("mock-llm", Sampling::default(), &fixtures).unwrap();
    let cache = CacheStore::open(&fault_dir.path().join("cache")).unwrap();
    let examples = synthetic::examples();
    let train: Vec<_> =
        examples.iter().filter(|e| e.id.starts_with("syn-train")).cloned().collect();
    let gamma = 2;
    let pset = elicit_perspectives(synthetic::SOURCE_TARGET, gamma, &backend, &cache).unwrap();
    let explanations = generate_explanations(&train, &pset, &backend, &cache, 1).unwrap();
    assert_eq!(
        explanations.len(),
        train.len() * gamma,
        "criterion 06 FAIL: explanation grid incomplete"
    );
    let cells: BTreeSet<(String, usize)> =
        explanations.iter().map(|e| (e.example_id.clone(), e.perspective_index)).collect();
    assert_eq!(cells.len(), train.len() * gamma, "criterion 06 FAIL: duplicate cells");
    assert!(backend.calls_made() > 0);
    pass(6, "parsers survive 10k-string fuzz; cache replay makes zero requests byte-identically; fault-injected grid stays complete");
}

// ---------------------------------------------------------------------------
// 7–10. End-to-end training properties on the synthetic task
// ---------------------------------------------------------------------------

fn acceptance_config(
    root: &Path,
    gamma: usize,
    lr: f64,
    batch_size: usize,
    epochs: usize,
) -> RunConfig {
    let manifest = synthetic::write_dataset(&root.join("data")).unwrap();
    RunConfig {
        task: synthetic::task().name,
        gamma,
        ablation: Ablation::None,
        seed: 11,
        optimizer: OptimizerSection { name: "AdamW".to_string(), lr, batch_size, epochs },
        backbone_id: SYNTHETIC_BACKBONE_ID.to_string(),
        paths: PathsSection {
            data: manifest,
            cache: root.join("cache"),
            nle_corpus: root.join("nles/corpus.tsv"),
            checkpoints: root.join("ckpt"),
            reports: root.join("reports"),
        },
        expansion_limit: 4,
        llm: LlmBackendConfig::mock(Path::new("")),
    }
}

/// Criterion 7's exact configuration: 100 optimizer steps on the
/// 32-example synthetic source split.
fn overfit_config(root: &Path) -> RunConfig {
    acceptance_config(root, 2, 2e-3, 8, 25)
}

#[test]
fn criterion_07_end_to_end_overfit() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = overfit_config(dir.path());

    let tokenizer = WordPieceTokenizer::new(synthetic::vocab(), true).unwrap();
    let bconfig = synthetic::compact_backbone_config(tokenizer.vocab_size());
    let params = Backbone::<f32>::init(&bconfig, 0).unwrap().param_count();
    assert!(params <= 20_000_000, "criterion 07 FAIL: backbone has {params} parameters");

    let result = execute_run(&config).unwrap();
    let steps = result.training_curve.len();
    assert!(steps <= 200, "criterion 07 FAIL: {steps} steps exceeds 200");
    let train_fa = result.train_report.macro_favor_against;
    assert!(
        train_fa >= 0.95,
        "criterion 07 FAIL: train macro F1(A) {train_fa:.4} after {steps} steps"
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "criterion 07 FAIL: took {elapsed:?}");
    pass(
        7,
        &format!(
            "train macro F1(A) {train_fa:.4} after {steps} steps ({params} backbone params, {elapsed:?})"
        ),
    );
}

#[test]
fn criterion_08_ablation_machinery() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = acceptance_config(dir.path(), 2, 2e-3, 8, 2);
    base.optimizer.epochs = 2;
    let results = run_ablations(&base).unwrap();
    assert_eq!(results.len(), 3, "criterion 08 FAIL: expected 3 ablation rows");

    let no_tscot = &results[1];
    assert_eq!(no_tscot.config.ablation, Ablation::NoTscot);
    assert_eq!(
        no_tscot.provenance.llm_calls, 0,
        "criterion 08 FAIL: w/o-T made {} backend calls",
        no_tscot.provenance.llm_calls
    );

    let table = std::fs::read_to_string(base.paths.reports.join("ablation_table.txt")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4, "criterion 08 FAIL: table should be header + 3 rows:\n{table}");
    assert!(lines[0].starts_with("Model"), "criterion 08 FAIL:\n{table}");
    for (line, label) in lines[1..].iter().zip(["MPPT", "- w/o T", "- w/o S"]) {
        assert!(line.starts_with(label), "criterion 08 FAIL: row `{line}` != `{label}`");
        let cell: f64 = line
            .split_whitespace()
            .last()
            .unwrap()
            .parse()
            .unwrap_or_else(|_| panic!("criterion 08 FAIL: non-numeric cell in `{line}`"));
        assert!((0.0..=100.0).contains(&cell), "criterion 08 FAIL: cell {cell} out of range");
    }
    pass(
        8,
        "ablation table is structurally valid; w/o-T made zero LLM-backend calls (mock counter)",
    );
}

#[test]
fn criterion_09_determinism() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = execute_run(&overfit_config(dir_a.path())).unwrap();
    let b = execute_run(&overfit_config(dir_b.path())).unwrap();
    assert_eq!(
        a.training_curve.len(),
        b.training_curve.len(),
        "criterion 09 FAIL: curve lengths differ"
    );
    for ((sa, la), (sb, lb)) in a.training_curve.iter().zip(&b.training_curve) {
        assert_eq!(sa, sb, "criterion 09 FAIL: step numbering differs");
        assert!((la - lb).abs() <= 1e-6, "criterion 09 FAIL: step {sa}: {la} vs {lb}");
    }
    pass(
        9,
        &format!(
            "two identically-seeded runs match within 1e-6 across all {} steps",
            a.training_curve.len()
        ),
    );
}

#[test]
fn criterion_10_sweep_shape() {
    let dir = tempfile::tempdir().unwrap();
    let base = acceptance_config(dir.path(), 2, 2e-3, 8, 1);
    let results = gamma_sweep(&base, 2, 4).unwrap();
    assert_eq!(results.len(), 3, "criterion 10 FAIL: expected one result per γ");
    for (result, gamma) in results.iter().zip(2..=4) {
        assert_eq!(result.config.gamma, gamma, "criterion 10 FAIL: γ order");
    }
    let series = std::fs::read_to_string(base.paths.reports.join("gamma_sweep.tsv")).unwrap();
    let lines: Vec<&str> = series.lines().collect();
    assert_eq!(lines[0], "gamma\tmacro_favor_against", "criterion 10 FAIL: series header");
    assert_eq!(lines.len(), 4, "criterion 10 FAIL: series rows:\n{series}");
    let mut last_gamma = 0;
    for line in &lines[1..] {
        let (g, v) = line.split_once('\t').expect("two columns");
        let g: usize = g.parse().unwrap();
        let v: f64 = v.parse().unwrap();
        assert!(g > last_gamma, "criterion 10 FAIL: γ not ascending");
        assert!((0.0..=1.0).contains(&v), "criterion 10 FAIL: metric {v} out of range");
        last_gamma = g;
    }
    pass(10, "γ sweep over 2..4 yields 3 results and a well-formed (γ, metric) series");
}
