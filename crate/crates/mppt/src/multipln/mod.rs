//! MultiPLN: the prompt-tuning classifier.
//!
//! One prompt per perspective wraps the tweet, the perspective, and its
//! explanation around a mask slot; the backbone encodes each prompt; the
//! mask vectors are attention-fused and scored against label-word
//! embeddings drawn from the tied token-embedding table.

pub mod backbone;
pub mod checkpoint;
pub mod head;
pub mod optimizer;
pub mod tokenizer;

pub use backbone::{Backbone, BackboneConfig, ForwardCache};
pub use head::{HeadGrads, HeadTrace};
pub use optimizer::{AdamW, AdamWConfig};
pub use tokenizer::WordPieceTokenizer;

use ndarray::{Array1, Array2, NdFloat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Example, StanceLabel};
use crate::tscot::{Explanation, PerspectiveSet};
use crate::verbalizer::{AggregateMode, MaterializedVerbalizer};

#[derive(Debug, Error)]
pub enum MultiplnError {
    #[error("invalid vocabulary: {reason}")]
    BadVocab { reason: String },
    #[error("invalid model configuration: {reason}")]
    BadConfig { reason: String },
    #[error("token budget {budget} cannot fit the {scaffold}-token prompt scaffold")]
    BudgetTooSmall { scaffold: usize, budget: usize },
    #[error("no explanation for example `{example_id}` under perspective {perspective_index}")]
    MissingExplanation { example_id: String, perspective_index: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("checkpoint `{path}`: {reason}")]
    CheckpointFormat { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// How many characters truncation removed from each trimmable segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TruncationReport {
    pub chars_dropped_from_text: usize,
    pub chars_dropped_from_explanation: usize,
}

/// One filled template, tokenized and ready for the backbone.
///
/// `token_ids` are authoritative: they were assembled from per-segment
/// tokenizations before truncation, so `filled_text` (rebuilt from the kept
/// characters) is for display and audit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptInstance {
    pub example_id: String,
    pub perspective_index: usize,
    pub filled_text: String,
    pub token_ids: Vec<u32>,
    pub mask_position: usize,
    pub truncation: TruncationReport,
}

/// First `n_chars` characters of `s` (not bytes).
fn take_chars(s: &str, n_chars: usize) -> &str {
    match s.char_indices().nth(n_chars) {
        Some((byte, _)) => &s[..byte],
        None => s,
    }
}

/// Builds prompt instances under a hard token budget.
///
/// Over budget, explanation tokens are tail-trimmed first, then tweet
/// tokens; the scaffold (template wording, perspective, target, mask) is
/// never cut.
#[derive(Debug, Clone)]
pub struct PromptBuilder {
    tokenizer: WordPieceTokenizer,
    max_len: usize,
}

/// Outcome of budgeting one trimmable segment.
struct TrimmedSegment {
    ids: Vec<u32>,
    kept_text_chars: usize,
    chars_dropped: usize,
}

impl PromptBuilder {
    pub fn new(tokenizer: WordPieceTokenizer, max_len: usize) -> PromptBuilder {
        PromptBuilder { tokenizer, max_len }
    }

    pub fn tokenizer(&self) -> &WordPieceTokenizer {
        &self.tokenizer
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    fn trim(&self, text: &str, keep_tokens: usize) -> TrimmedSegment {
        let spans = self.tokenizer.encode_with_spans(text);
        let total_chars = text.chars().count();
        if spans.len() <= keep_tokens {
            return TrimmedSegment {
                ids: spans.iter().map(|s| s.id).collect(),
                kept_text_chars: total_chars,
                chars_dropped: 0,
            };
        }
        let kept = &spans[..keep_tokens];
        let kept_text_chars = kept.last().map_or(0, |s| s.end);
        TrimmedSegment {
            ids: kept.iter().map(|s| s.id).collect(),
            kept_text_chars,
            chars_dropped: total_chars - kept_text_chars,
        }
    }

    fn assemble(
        &self,
        example_id: &str,
        perspective_index: usize,
        text: &str,
        clause: Option<(&str, &str)>,
        target: &str,
    ) -> Result<PromptInstance, MultiplnError> {
        let glue1 = clause.map(|(p, _)| format!(". From the perspective of {p} and "));
        let glue2 = format!(". The attitude to {target} is [MASK].");
        let glue1_ids = glue1.as_deref().map(|g| self.tokenizer.encode(g)).unwrap_or_default();
        let glue2_ids = self.tokenizer.encode(&glue2);
        let scaffold = 2 + glue1_ids.len() + glue2_ids.len();
        if scaffold > self.max_len {
            return Err(MultiplnError::BudgetTooSmall { scaffold, budget: self.max_len });
        }
        let budget = self.max_len - scaffold;

        let text_tokens = self.tokenizer.encode_with_spans(text).len();
        let trimmed_text = self.trim(text, text_tokens.min(budget));
        let trimmed_expl = clause.map(|(_, k)| self.trim(k, budget - trimmed_text.ids.len()));

        let mut ids = Vec::with_capacity(self.max_len);
        ids.push(self.tokenizer.cls_id());
        ids.extend_from_slice(&trimmed_text.ids);
        ids.extend_from_slice(&glue1_ids);
        if let Some(t) = &trimmed_expl {
            ids.extend_from_slice(&t.ids);
        }
        ids.extend_from_slice(&glue2_ids);
        ids.push(self.tokenizer.sep_id());
        debug_assert!(ids.len() <= self.max_len);

        let mask_id = self.tokenizer.mask_id();
        let mask_positions: Vec<usize> =
            ids.iter().enumerate().filter(|(_, &id)| id == mask_id).map(|(i, _)| i).collect();
        assert_eq!(mask_positions.len(), 1, "prompt must contain exactly one mask");

        let kept_text = take_chars(text, trimmed_text.kept_text_chars);
        let filled_text = match clause {
            Some((p, k)) => {
                let kept_k = take_chars(k, trimmed_expl.as_ref().map_or(0, |t| t.kept_text_chars));
                format!(
                    "{kept_text}. From the perspective of {p} and {kept_k}. \
                     The attitude to {target} is [MASK]."
                )
            }
            None => format!("{kept_text}. The attitude to {target} is [MASK]."),
        };
        Ok(PromptInstance {
            example_id: example_id.to_string(),
            perspective_index,
            filled_text,
            token_ids: ids,
            mask_position: mask_positions[0],
            truncation: TruncationReport {
                chars_dropped_from_text: trimmed_text.chars_dropped,
                chars_dropped_from_explanation: trimmed_expl.map_or(0, |t| t.chars_dropped),
            },
        })
    }

    /// Full template: tweet, perspective, explanation, target, mask.
    pub fn build(
        &self,
        example_id: &str,
        text: &str,
        perspective: &str,
        perspective_index: usize,
        explanation: &str,
        target: &str,
    ) -> Result<PromptInstance, MultiplnError> {
        self.assemble(example_id, perspective_index, text, Some((perspective, explanation)), target)
    }

    /// Reduced template (perspective machinery ablated): tweet, target, mask.
    pub fn build_plain(
        &self,
        example_id: &str,
        text: &str,
        target: &str,
    ) -> Result<PromptInstance, MultiplnError> {
        self.assemble(example_id, 0, text, None, target)
    }

    /// One instance per perspective for `example`, joined with its
    /// explanations (any superset may be passed; rows are matched by id).
    pub fn prompts_for(
        &self,
        example: &Example,
        pset: &PerspectiveSet,
        explanations: &[Explanation],
    ) -> Result<Vec<PromptInstance>, MultiplnError> {
        let mut by_index: Vec<Option<&Explanation>> = vec![None; pset.gamma];
        for expl in explanations {
            if expl.example_id == example.id && expl.perspective_index < pset.gamma {
                by_index[expl.perspective_index] = Some(expl);
            }
        }
        let mut out = Vec::with_capacity(pset.gamma);
        for (i, perspective) in pset.perspectives.iter().enumerate() {
            let expl = by_index[i].ok_or_else(|| MultiplnError::MissingExplanation {
                example_id: example.id.clone(),
                perspective_index: i,
            })?;
            out.push(self.build(
                &example.id,
                &example.text,
                perspective,
                i,
                &expl.text,
                &pset.target,
            )?);
        }
        Ok(out)
    }
}

/// The trainable model: backbone, attention query, and the verbalizer
/// resolved against the backbone vocabulary. Unit embeddings are tied to
/// the token-embedding table (multi-token units average their rows).
#[derive(Debug, Clone)]
pub struct Model<F> {
    pub backbone: Backbone<F>,
    pub query: Array1<F>,
    pub query_seed: u64,
    pub verbalizer_units: MaterializedVerbalizer,
    unit_labels: Vec<usize>,
    pub mode: AggregateMode,
    /// When set, label-word embeddings receive no gradient updates.
    pub freeze_units: bool,
}

/// Gradient accumulator shaped like the trainable parameters.
#[derive(Debug, Clone)]
pub struct ModelGrads<F> {
    pub backbone: Backbone<F>,
    pub query: Array1<F>,
}

impl<F: NdFloat> ModelGrads<F> {
    pub fn zero(&mut self) {
        for (_, _, s) in self.backbone.slots_mut() {
            s.fill(F::zero());
        }
        self.query.fill(F::zero());
    }
}

/// Eval-time result of one example: the label distribution plus the
/// attention and word-probability traces.
#[derive(Debug, Clone)]
pub struct ExampleOutput<F> {
    pub yhat: Array1<F>,
    pub alpha: Array1<F>,
    pub delta: Array1<F>,
}

impl<F: NdFloat> ExampleOutput<F> {
    pub fn predicted(&self) -> StanceLabel {
        let mut best = 0;
        for i in 1..self.yhat.len() {
            if self.yhat[i] > self.yhat[best] {
                best = i;
            }
        }
        StanceLabel::from_index(best)
    }
}

/// Train-time forward state: output plus everything backward consumes.
pub struct TrainForward<F> {
    pub output: ExampleOutput<F>,
    trace: HeadTrace<F>,
    mask_vectors: Array2<F>,
    unit_matrix: Array2<F>,
    caches: Vec<ForwardCache<F>>,
    mask_positions: Vec<usize>,
    seq_lens: Vec<usize>,
}

impl<F: NdFloat> Model<F> {
    /// Fresh model: the query is drawn from `query_seed` with the
    /// backbone's initializer scale.
    pub fn new(
        backbone: Backbone<F>,
        verbalizer_units: MaterializedVerbalizer,
        mode: AggregateMode,
        query_seed: u64,
        freeze_units: bool,
    ) -> Result<Model<F>, MultiplnError> {
        let d = backbone.config.d_model;
        let mut rng = ChaCha8Rng::seed_from_u64(query_seed);
        let std = F::from(0.02).expect("const");
        let query = Array1::from_shape_fn(d, |_| {
            F::from(backbone::trunc_normal_unit(&mut rng)).expect("sample fits") * std
        });
        Self::from_parts(backbone, query, query_seed, verbalizer_units, mode, freeze_units)
    }

    /// Assemble from existing parts (checkpoint restore).
    pub fn from_parts(
        backbone: Backbone<F>,
        query: Array1<F>,
        query_seed: u64,
        verbalizer_units: MaterializedVerbalizer,
        mode: AggregateMode,
        freeze_units: bool,
    ) -> Result<Model<F>, MultiplnError> {
        let vocab = backbone.config.vocab_size;
        for unit in verbalizer_units.units() {
            if let Some(&id) = unit.token_ids.iter().find(|&&id| id as usize >= vocab) {
                return Err(MultiplnError::BadConfig {
                    reason: format!("unit `{}` token id {id} outside vocabulary", unit.word),
                });
            }
        }
        if query.len() != backbone.config.d_model {
            return Err(MultiplnError::DimensionMismatch {
                expected: backbone.config.d_model,
                found: query.len(),
            });
        }
        let unit_labels = verbalizer_units.unit_label_indices();
        Ok(Model { backbone, query, query_seed, verbalizer_units, unit_labels, mode, freeze_units })
    }

    pub fn hidden_dim(&self) -> usize {
        self.backbone.config.d_model
    }

    /// Label-word embedding matrix (units × d): tied token-embedding rows,
    /// averaged for multi-token units.
    pub fn unit_matrix(&self) -> Array2<F> {
        let d = self.hidden_dim();
        let units = self.verbalizer_units.units();
        let mut w = Array2::zeros((units.len(), d));
        for (u, unit) in units.iter().enumerate() {
            let n = F::from(unit.token_ids.len()).expect("count fits");
            for &tid in &unit.token_ids {
                for j in 0..d {
                    w[[u, j]] += self.backbone.token_emb[[tid as usize, j]] / n;
                }
            }
        }
        w
    }

    /// Runs the backbone over each prompt and gathers the hidden state at
    /// every mask position into the rows of a γ×d matrix.
    pub fn encode_mask_vectors(
        &self,
        prompts: &[PromptInstance],
        train: bool,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> (Array2<F>, Vec<ForwardCache<F>>) {
        assert!(!prompts.is_empty(), "at least one prompt per example");
        let d = self.hidden_dim();
        let mut r = Array2::zeros((prompts.len(), d));
        let mut caches = Vec::with_capacity(prompts.len());
        for (t, prompt) in prompts.iter().enumerate() {
            let (hidden, cache) =
                self.backbone.forward(&prompt.token_ids, train, dropout_rng.as_deref_mut());
            r.row_mut(t).assign(&hidden.row(prompt.mask_position));
            caches.push(cache);
        }
        debug_assert!(r.iter().all(|v| v.is_finite()), "mask vectors must be finite");
        (r, caches)
    }

    fn forward_inner(
        &self,
        prompts: &[PromptInstance],
        train: bool,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> TrainForward<F> {
        let (r, caches) = self.encode_mask_vectors(prompts, train, dropout_rng);
        let unit_matrix = self.unit_matrix();
        let trace = head::head_forward(
            &r.view(),
            &self.query.view(),
            &unit_matrix.view(),
            &self.unit_labels,
            3,
            self.mode,
        );
        let output = ExampleOutput {
            yhat: trace.mu.clone(),
            alpha: trace.alpha.clone(),
            delta: trace.delta.clone(),
        };
        TrainForward {
            output,
            trace,
            mask_vectors: r,
            unit_matrix,
            mask_positions: prompts.iter().map(|p| p.mask_position).collect(),
            seq_lens: prompts.iter().map(|p| p.token_ids.len()).collect(),
            caches,
        }
    }

    /// Inference forward: ŷ over the three labels plus trace.
    pub fn forward(&self, prompts: &[PromptInstance]) -> ExampleOutput<F> {
        self.forward_inner(prompts, false, None).output
    }

    /// Training forward: keeps backbone caches for [`Self::backward`].
    pub fn forward_train(
        &self,
        prompts: &[PromptInstance],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> TrainForward<F> {
        self.forward_inner(prompts, true, dropout_rng)
    }

    /// Cross-entropy of one example's output.
    pub fn loss(&self, output: &ExampleOutput<F>, gold: StanceLabel) -> F {
        head::nll(&output.yhat.view(), gold.index())
    }

    /// Accumulates gradients for one example into `grads`.
    pub fn backward(&self, fwd: &TrainForward<F>, gold: StanceLabel, grads: &mut ModelGrads<F>) {
        let head_grads = head::head_backward(
            &fwd.mask_vectors.view(),
            &self.query.view(),
            &fwd.unit_matrix.view(),
            &self.unit_labels,
            3,
            self.mode,
            &fwd.trace,
            gold.index(),
        );
        grads.query += &head_grads.dh;
        if !self.freeze_units {
            let d = self.hidden_dim();
            for (u, unit) in self.verbalizer_units.units().iter().enumerate() {
                let n = F::from(unit.token_ids.len()).expect("count fits");
                for &tid in &unit.token_ids {
                    for j in 0..d {
                        grads.backbone.token_emb[[tid as usize, j]] +=
                            head_grads.dunits[[u, j]] / n;
                    }
                }
            }
        }
        for (t, cache) in fwd.caches.iter().enumerate() {
            let mut dhidden = Array2::zeros((fwd.seq_lens[t], self.hidden_dim()));
            dhidden.row_mut(fwd.mask_positions[t]).assign(&head_grads.dr.row(t));
            self.backbone.backward(cache, &dhidden, &mut grads.backbone);
        }
    }

    pub fn zero_grads(&self) -> ModelGrads<F> {
        ModelGrads { backbone: self.backbone.zeros_like(), query: Array1::zeros(self.hidden_dim()) }
    }

    /// Slot lengths for building the optimizer (backbone slots, then query).
    pub fn slot_lens(&self) -> Vec<usize> {
        let mut lens: Vec<usize> = self.backbone.slots().iter().map(|(_, _, s)| s.len()).collect();
        lens.push(self.query.len());
        lens
    }

    pub fn param_count(&self) -> usize {
        self.backbone.param_count() + self.query.len()
    }
}

/// One optimizer update from accumulated gradients.
pub fn apply_step<F: NdFloat>(model: &mut Model<F>, grads: &ModelGrads<F>, opt: &mut AdamW<F>) {
    let mut params = model.backbone.slots_mut();
    params.push((String::from("query"), true, model.query.as_slice_mut().expect("contiguous")));
    let mut gslots = grads.backbone.slots();
    gslots.push((String::from("query"), true, grads.query.as_slice().expect("contiguous")));
    opt.step(params, gslots);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verbalizer::{base_verbalizer, materialize};
    use rand::{Rng, SeedableRng};

    fn test_vocab() -> Vec<String> {
        let mut v: Vec<String> = tokenizer::SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        for w in [
            "the",
            "attitude",
            "to",
            "is",
            "from",
            "perspective",
            "of",
            "and",
            ".",
            ",",
            "a",
            "favor",
            "against",
            "none",
            "support",
            "oppose",
            "neutral",
            "climate",
            "policy",
            "record",
            "public",
            "opinion",
            "trump",
            "hillary",
            "good",
            "bad",
            "tax",
            "we",
            "believe",
            "in",
            "this",
            "donald",
            "pro",
            "con",
            "##s",
            "every",
            "word",
            "here",
        ] {
            v.push(w.to_string());
        }
        v
    }

    fn builder(max_len: usize) -> PromptBuilder {
        PromptBuilder::new(WordPieceTokenizer::new(test_vocab(), true).unwrap(), max_len)
    }

    fn tiny_model(seed: u64) -> Model<f64> {
        let tok = WordPieceTokenizer::new(test_vocab(), true).unwrap();
        let config = BackboneConfig {
            vocab_size: tok.vocab_size(),
            max_position: 48,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            n_layers: 1,
            dropout: 0.0,
        };
        let backbone = Backbone::init(&config, seed).unwrap();
        let units = materialize(&base_verbalizer(), &tok).unwrap();
        Model::new(backbone, units, AggregateMode::Sum, seed + 1, false).unwrap()
    }

    #[test]
    fn full_template_fills_and_masks_once() {
        let b = builder(48);
        let p = b
            .build(
                "ex1",
                "We believe in this policy",
                "Public opinion",
                0,
                "The record is good",
                "Donald Trump",
            )
            .unwrap();
        assert_eq!(
            p.filled_text,
            "We believe in this policy. From the perspective of Public opinion and \
             The record is good. The attitude to Donald Trump is [MASK]."
        );
        assert_eq!(p.filled_text.matches("[MASK]").count(), 1);
        let mask_id = b.tokenizer().mask_id();
        assert_eq!(p.token_ids[p.mask_position], mask_id);
        assert_eq!(p.token_ids.iter().filter(|&&id| id == mask_id).count(), 1);
        assert_eq!(p.truncation, TruncationReport::default());
        assert!(p.token_ids.len() <= 48);
    }

    #[test]
    fn reduced_template_has_no_perspective_clause() {
        let b = builder(48);
        let p = b.build_plain("ex1", "We believe in this policy", "Donald Trump").unwrap();
        assert_eq!(
            p.filled_text,
            "We believe in this policy. The attitude to Donald Trump is [MASK]."
        );
        assert!(!p.filled_text.contains("perspective"));
        assert_eq!(p.token_ids[p.mask_position], b.tokenizer().mask_id());
    }

    #[test]
    fn over_budget_trims_explanation_before_text() {
        let b = builder(26);
        let text = "we believe in this policy";
        let expl = "the record is good and the policy is good and the opinion is good";
        let p = b.build("ex1", text, "Public opinion", 0, expl, "Trump").unwrap();
        assert!(p.token_ids.len() <= 26);
        assert_eq!(p.truncation.chars_dropped_from_text, 0, "text kept intact first");
        assert!(p.truncation.chars_dropped_from_explanation > 0);
        // The scaffold, target, and mask survive.
        assert!(p.filled_text.contains("From the perspective of Public opinion and"));
        assert!(p.filled_text.ends_with("The attitude to Trump is [MASK]."));

        // Tighter budget: explanation fully gone, text trimmed too.
        let b = builder(20);
        let p = b.build("ex1", text, "Public opinion", 0, expl, "Trump").unwrap();
        assert!(p.token_ids.len() <= 20);
        assert_eq!(p.truncation.chars_dropped_from_explanation, expl.chars().count());
        assert!(p.truncation.chars_dropped_from_text > 0);
        assert_eq!(p.token_ids[p.mask_position], b.tokenizer().mask_id());
    }

    #[test]
    fn scaffold_overflow_is_an_error() {
        let b = builder(8);
        let err = b.build("ex1", "text", "Public opinion", 0, "k", "Trump").unwrap_err();
        assert!(matches!(err, MultiplnError::BudgetTooSmall { .. }));
    }

    #[test]
    fn prompts_for_joins_by_perspective_index() {
        let b = builder(64);
        let example = Example {
            id: "e7".into(),
            text: "we believe in this".into(),
            target: "Trump".into(),
            label: Some(StanceLabel::Favor),
            split: crate::corpus::Split::Train,
        };
        let pset = PerspectiveSet {
            target: "Trump".into(),
            gamma: 2,
            perspectives: vec!["Public opinion".into(), "Policy record".into()],
            provenance: "k".into(),
        };
        let expl = |i: usize, text: &str| Explanation {
            example_id: "e7".into(),
            perspective_index: i,
            perspective: pset.perspectives[i].clone(),
            text: text.into(),
            llm_judgment: None,
            provenance: "k".into(),
        };
        // Shuffled order and an unrelated example's row are both fine.
        let mut rows = vec![expl(1, "the record is bad"), expl(0, "opinion is good")];
        rows.push(Explanation { example_id: "other".into(), ..expl(0, "x") });
        let prompts = b.prompts_for(&example, &pset, &rows).unwrap();
        assert_eq!(prompts.len(), 2);
        assert!(prompts[0].filled_text.contains("Public opinion and opinion is good"));
        assert!(prompts[1].filled_text.contains("Policy record and the record is bad"));

        let err = b.prompts_for(&example, &pset, &rows[..1]).unwrap_err();
        assert!(matches!(err, MultiplnError::MissingExplanation { perspective_index: 0, .. }));
    }

    #[test]
    fn forward_outputs_a_distribution_with_traces() {
        let model = tiny_model(3);
        let b = builder(48);
        let prompts = vec![
            b.build("e1", "we believe in this", "Public opinion", 0, "good policy", "trump")
                .unwrap(),
            b.build("e1", "we believe in this", "Policy record", 1, "bad record", "trump").unwrap(),
        ];
        let out = model.forward(&prompts);
        assert_eq!(out.yhat.len(), 3);
        assert!((out.yhat.sum() - 1.0).abs() < 1e-6);
        assert_eq!(out.alpha.len(), 2);
        assert!((out.alpha.sum() - 1.0).abs() < 1e-6);
        assert_eq!(out.delta.len(), model.verbalizer_units.n_units());
        assert!((out.delta.sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identical_prompts_give_identical_mask_vectors() {
        let model = tiny_model(5);
        let b = builder(48);
        let p = b.build("e1", "we believe in this", "Public opinion", 0, "good", "trump").unwrap();
        let prompts = vec![p.clone(), p.clone(), p];
        let (r, _) = model.encode_mask_vectors(&prompts, false, None);
        for t in 1..3 {
            for j in 0..model.hidden_dim() {
                assert_eq!(r[[0, j]], r[[t, j]]);
            }
        }
        let out = model.forward(&prompts);
        for t in 0..3 {
            assert!((out.alpha[t] - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn perspective_text_changes_the_mask_vector() {
        let model = tiny_model(7);
        let b = builder(48);
        let p1 = b.build("e1", "we believe in this", "Public opinion", 0, "good", "trump").unwrap();
        let p2 = b.build("e1", "we believe in this", "Policy record", 0, "good", "trump").unwrap();
        let (r, _) = model.encode_mask_vectors(&[p1, p2], false, None);
        let differs = (0..model.hidden_dim()).any(|j| (r[[0, j]] - r[[1, j]]).abs() > 1e-9);
        assert!(differs, "different perspectives must produce different vectors");
    }

    #[test]
    fn single_prompt_forward_reduces_to_direct_scoring() {
        let model = tiny_model(11);
        let b = builder(48);
        let p = b.build("e1", "we believe in this", "Public opinion", 0, "good", "trump").unwrap();
        let prompts = vec![p];
        let out = model.forward(&prompts);
        // Direct single-prompt computation: score the lone mask vector.
        let (r, _) = model.encode_mask_vectors(&prompts, false, None);
        let delta = head::score(&model.unit_matrix().view(), &r.row(0));
        let mu = head::aggregate(
            &delta.view(),
            &model.verbalizer_units.unit_label_indices(),
            3,
            AggregateMode::Sum,
        );
        for l in 0..3 {
            assert!((out.yhat[l] - mu[l]).abs() < 1e-12);
        }
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        // End-to-end: loss w.r.t. query, token embeddings (tied units +
        // prompt tokens), and a deep backbone weight.
        const EPS: f64 = 1e-5;
        let model = tiny_model(13);
        let b = builder(48);
        let prompts = vec![
            b.build("e1", "we believe in this", "Public opinion", 0, "good policy", "trump")
                .unwrap(),
            b.build("e1", "we believe in this", "Policy record", 1, "bad record", "trump").unwrap(),
        ];
        let gold = StanceLabel::Against;
        let fwd = model.forward_train(&prompts, None);
        let mut grads = model.zero_grads();
        model.backward(&fwd, gold, &mut grads);

        let loss_of = |m: &Model<f64>| {
            let out = m.forward(&prompts);
            head::nll(&out.yhat.view(), gold.index())
        };
        let check = |analytic: f64, numeric: f64, what: &str| {
            let scale = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic - numeric).abs() / scale <= 1e-4,
                "{what}: analytic {analytic}, numeric {numeric}"
            );
        };

        for j in 0..model.hidden_dim() {
            let mut mp = model.clone();
            mp.query[j] += EPS;
            let mut mm = model.clone();
            mm.query[j] -= EPS;
            check(grads.query[j], (loss_of(&mp) - loss_of(&mm)) / (2.0 * EPS), "query");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..40 {
            let v = rng.random_range(0..model.backbone.config.vocab_size);
            let j = rng.random_range(0..model.hidden_dim());
            let mut mp = model.clone();
            mp.backbone.token_emb[[v, j]] += EPS;
            let mut mm = model.clone();
            mm.backbone.token_emb[[v, j]] -= EPS;
            check(
                grads.backbone.token_emb[[v, j]],
                (loss_of(&mp) - loss_of(&mm)) / (2.0 * EPS),
                "token_emb",
            );
        }
        for _ in 0..20 {
            let a = rng.random_range(0..model.backbone.config.d_model);
            let bj = rng.random_range(0..model.backbone.config.d_model);
            let mut mp = model.clone();
            mp.backbone.layers[0].wo[[a, bj]] += EPS;
            let mut mm = model.clone();
            mm.backbone.layers[0].wo[[a, bj]] -= EPS;
            check(
                grads.backbone.layers[0].wo[[a, bj]],
                (loss_of(&mp) - loss_of(&mm)) / (2.0 * EPS),
                "wo",
            );
        }
    }

    #[test]
    fn frozen_units_receive_no_tied_gradient() {
        let mut model = tiny_model(17);
        model.freeze_units = true;
        let b = builder(48);
        // Prompt avoids the label words so the only token_emb gradient for
        // them would come through the tying path.
        let prompts = vec![b
            .build("e1", "we believe in this", "Public opinion", 0, "good", "climate")
            .unwrap()];
        let fwd = model.forward_train(&prompts, None);
        let mut grads = model.zero_grads();
        model.backward(&fwd, StanceLabel::Favor, &mut grads);
        let favor_id = b.tokenizer().encode_with_spans("favor")[0].id as usize;
        for j in 0..model.hidden_dim() {
            assert_eq!(grads.backbone.token_emb[[favor_id, j]], 0.0);
        }
        model.freeze_units = false;
        let mut grads2 = model.zero_grads();
        model.backward(&fwd, StanceLabel::Favor, &mut grads2);
        let moved =
            (0..model.hidden_dim()).any(|j| grads2.backbone.token_emb[[favor_id, j]].abs() > 0.0);
        assert!(moved, "tied path must update label-word rows when not frozen");
    }

    #[test]
    fn training_step_reduces_loss_on_one_example() {
        let mut model = tiny_model(19);
        let b = builder(48);
        let prompts = vec![b
            .build("e1", "we believe in this", "Public opinion", 0, "good", "trump")
            .unwrap()];
        let gold = StanceLabel::Favor;
        let mut opt =
            AdamW::new(AdamWConfig { lr: 5e-3, ..AdamWConfig::default() }, &model.slot_lens());
        let initial = model.loss(&model.forward(&prompts), gold);
        for _ in 0..20 {
            let fwd = model.forward_train(&prompts, None);
            let mut grads = model.zero_grads();
            model.backward(&fwd, gold, &mut grads);
            apply_step(&mut model, &grads, &mut opt);
        }
        let after = model.loss(&model.forward(&prompts), gold);
        assert!(after < initial, "loss {initial} -> {after}");
    }

    #[test]
    fn alpha_shapes_match_head_math() {
        // Plumbing check: fuse over model-produced vectors equals head math
        // on the same inputs.
        let model = tiny_model(23);
        let b = builder(48);
        let prompts = vec![
            b.build("e1", "we believe in this", "Public opinion", 0, "good", "trump").unwrap(),
            b.build("e1", "we believe in this", "Policy record", 1, "bad", "trump").unwrap(),
        ];
        let (r, _) = model.encode_mask_vectors(&prompts, false, None);
        let (alpha, _) = head::fuse(&r.view(), &model.query.view());
        let out = model.forward(&prompts);
        for t in 0..2 {
            assert!((alpha[t] - out.alpha[t]).abs() < 1e-12);
        }
    }
}
