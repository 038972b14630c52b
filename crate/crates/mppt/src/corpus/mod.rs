//! Stance datasets, cross-target task construction, and evaluation metrics.

mod manifest;

pub use manifest::{
    load_dataset, load_with_manifest, ColumnMap, DatasetFile, DatasetManifest, FileFormat,
    LoadSummary, LoadedDataset, RejectReason, Rejection,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Canonical three-way stance label space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StanceLabel {
    Favor,
    Against,
    None,
}

impl StanceLabel {
    pub const ALL: [StanceLabel; 3] = [StanceLabel::Favor, StanceLabel::Against, StanceLabel::None];

    /// The base verbalizer word for this label.
    pub fn canonical_word(self) -> &'static str {
        match self {
            StanceLabel::Favor => "favor",
            StanceLabel::Against => "against",
            StanceLabel::None => "none",
        }
    }

    /// Parse a canonical label word (favor/against/none), case-insensitive.
    pub fn from_canonical(s: &str) -> Option<StanceLabel> {
        match s.trim().to_lowercase().as_str() {
            "favor" => Some(StanceLabel::Favor),
            "against" => Some(StanceLabel::Against),
            "none" => Some(StanceLabel::None),
            _ => Option::None,
        }
    }

    /// Parse a label word including the synonyms LLM outputs tend to use
    /// (pro/con/neutral alongside favor/against/none).
    pub fn from_word_or_synonym(s: &str) -> Option<StanceLabel> {
        match s.trim().to_lowercase().as_str() {
            "favor" | "pro" => Some(StanceLabel::Favor),
            "against" | "con" => Some(StanceLabel::Against),
            "none" | "neutral" => Some(StanceLabel::None),
            _ => Option::None,
        }
    }

    /// Stable index into `[Favor, Against, None]`-ordered arrays.
    pub fn index(self) -> usize {
        match self {
            StanceLabel::Favor => 0,
            StanceLabel::Against => 1,
            StanceLabel::None => 2,
        }
    }

    pub fn from_index(i: usize) -> StanceLabel {
        Self::ALL[i]
    }
}

impl fmt::Display for StanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical_word())
    }
}

/// Native dataset split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// One (text, target, label) record. `label` is absent for unlabeled
/// inference inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub target: String,
    pub label: Option<StanceLabel>,
    pub split: Split,
}

/// Unicode NFC plus whitespace collapse. No case folding: downstream prompt
/// text is case-sensitive and the classifier tokenizer decides casing.
pub fn normalize_text(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Normalized, case-folded form used when comparing targets/topics.
pub fn normalize_target(s: &str) -> String {
    normalize_text(s).to_lowercase()
}

/// Whether a task trains on labeled source targets (cross-target) or relies
/// on native splits with unseen evaluation topics (zero-shot).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    CrossTarget,
    ZeroShot,
}

/// A source→destination target assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    #[serde(default)]
    pub source_targets: Vec<String>,
    #[serde(default)]
    pub dest_targets: Vec<String>,
    pub mode: TaskMode,
}

impl TaskSpec {
    pub fn cross_target(name: &str, source: &str, dest: &str) -> TaskSpec {
        TaskSpec {
            name: name.to_string(),
            source_targets: vec![source.to_string()],
            dest_targets: vec![dest.to_string()],
            mode: TaskMode::CrossTarget,
        }
    }

    fn normalized_sources(&self) -> BTreeSet<String> {
        self.source_targets.iter().map(|t| normalize_target(t)).collect()
    }

    fn normalized_dests(&self) -> BTreeSet<String> {
        self.dest_targets.iter().map(|t| normalize_target(t)).collect()
    }
}

/// The four standard SEM16 cross-target tasks (F→L, L→F, H→D, D→H).
pub fn sem16_tasks() -> Vec<TaskSpec> {
    const F: &str = "Feminist Movement";
    const L: &str = "Legalization of Abortion";
    const H: &str = "Hillary Clinton";
    const D: &str = "Donald Trump";
    vec![
        TaskSpec::cross_target("F->L", F, L),
        TaskSpec::cross_target("L->F", L, F),
        TaskSpec::cross_target("H->D", H, D),
        TaskSpec::cross_target("D->H", D, H),
    ]
}

/// Look up one of the predefined SEM16 tasks by name (`F->L`, `L->F`,
/// `H->D`, `D->H`).
pub fn sem16_task(name: &str) -> Option<TaskSpec> {
    sem16_tasks().into_iter().find(|t| t.name == name)
}

/// Output of [`build_task`]: the training and evaluation partitions.
#[derive(Debug, Clone)]
pub struct TaskPartition {
    pub train: Vec<Example>,
    /// Dev examples, present only when the dataset carries a dev split
    /// (zero-shot mode). Used for model selection, never for training.
    pub dev: Vec<Example>,
    pub eval: Vec<Example>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest column `{column}` not found in header of {path}")]
    MissingColumn { column: String, path: String },
    #[error("duplicate example id `{id}` in {path}")]
    DuplicateId { id: String, path: String },
    #[error("label map must cover favor/against/none and use no other canonical labels: {reason}")]
    InvalidLabelMap { reason: String },
    #[error("invalid manifest: {reason}")]
    InvalidManifest { reason: String },
    #[error("cross-target source and destination targets overlap on `{target}`")]
    TargetOverlap { target: String },
    #[error("{side} partition is empty")]
    EmptyPartition { side: &'static str },
    #[error("zero-shot eval topic `{topic}` also appears in the train split")]
    TargetLeak { topic: String },
    #[error("source example `{id}` is unlabeled; cross-target training requires labels")]
    UnlabeledSource { id: String },
    #[error("gold and pred lengths differ ({gold} vs {pred})")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("cannot evaluate an empty label sequence")]
    EmptyInput,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse manifest {path}: {source}")]
    ManifestParse {
        path: String,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

/// Split examples into train/eval according to the task spec.
///
/// Cross-target mode partitions by target; zero-shot mode follows the native
/// splits and verifies that no eval topic leaks into training.
pub fn build_task(examples: &[Example], spec: &TaskSpec) -> Result<TaskPartition, CorpusError> {
    match spec.mode {
        TaskMode::CrossTarget => {
            let sources = spec.normalized_sources();
            let dests = spec.normalized_dests();
            if let Some(t) = sources.intersection(&dests).next() {
                return Err(CorpusError::TargetOverlap { target: t.clone() });
            }
            let mut train = Vec::new();
            let mut eval = Vec::new();
            for ex in examples {
                let t = normalize_target(&ex.target);
                if sources.contains(&t) {
                    if ex.label.is_none() {
                        return Err(CorpusError::UnlabeledSource { id: ex.id.clone() });
                    }
                    train.push(ex.clone());
                } else if dests.contains(&t) {
                    eval.push(ex.clone());
                }
            }
            if train.is_empty() {
                return Err(CorpusError::EmptyPartition { side: "train" });
            }
            if eval.is_empty() {
                return Err(CorpusError::EmptyPartition { side: "eval" });
            }
            Ok(TaskPartition { train, dev: Vec::new(), eval })
        }
        TaskMode::ZeroShot => {
            let dests = spec.normalized_dests();
            let keep_eval =
                |ex: &Example| dests.is_empty() || dests.contains(&normalize_target(&ex.target));
            let train: Vec<Example> =
                examples.iter().filter(|e| e.split == Split::Train).cloned().collect();
            let dev: Vec<Example> =
                examples.iter().filter(|e| e.split == Split::Dev).cloned().collect();
            let eval: Vec<Example> = examples
                .iter()
                .filter(|e| e.split == Split::Test && keep_eval(e))
                .cloned()
                .collect();
            if train.is_empty() {
                return Err(CorpusError::EmptyPartition { side: "train" });
            }
            if eval.is_empty() {
                return Err(CorpusError::EmptyPartition { side: "eval" });
            }
            let train_topics: BTreeSet<String> =
                train.iter().map(|e| normalize_target(&e.target)).collect();
            for ex in &eval {
                let topic = normalize_target(&ex.target);
                if train_topics.contains(&topic) {
                    return Err(CorpusError::TargetLeak { topic });
                }
            }
            Ok(TaskPartition { train, dev, eval })
        }
    }
}

/// Per-class F1 plus the two macro averages used across the two benchmarks:
/// `macro_favor_against` (SEM16 convention) and `macro_all` (VAST Macro F1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_f1: BTreeMap<StanceLabel, f64>,
    pub macro_favor_against: f64,
    pub macro_all: f64,
    /// counts[gold][pred], rows/cols in `[favor, against, none]` order.
    pub counts: [[u64; 3]; 3],
    pub n_examples: usize,
}

impl EvalReport {
    pub fn f1(&self, label: StanceLabel) -> f64 {
        self.per_class_f1[&label]
    }
}

/// Compute per-class F1 and macro averages over gold/pred label pairs.
///
/// F1 follows `2PR/(P+R)` with the zero-denominator convention: precision,
/// recall, and F1 are 0 whenever their denominator is 0.
pub fn evaluate(gold: &[StanceLabel], pred: &[StanceLabel]) -> Result<EvalReport, CorpusError> {
    if gold.len() != pred.len() {
        return Err(CorpusError::LengthMismatch { gold: gold.len(), pred: pred.len() });
    }
    if gold.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let mut counts = [[0u64; 3]; 3];
    for (g, p) in gold.iter().zip(pred) {
        counts[g.index()][p.index()] += 1;
    }
    let mut per_class_f1 = BTreeMap::new();
    for label in StanceLabel::ALL {
        let k = label.index();
        let tp = counts[k][k];
        let fp: u64 = (0..3).filter(|&g| g != k).map(|g| counts[g][k]).sum();
        let fn_: u64 = (0..3).filter(|&p| p != k).map(|p| counts[k][p]).sum();
        let denom = 2 * tp + fp + fn_;
        let f1 = if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
        per_class_f1.insert(label, f1);
    }
    let macro_favor_against =
        (per_class_f1[&StanceLabel::Favor] + per_class_f1[&StanceLabel::Against]) / 2.0;
    let macro_all = per_class_f1.values().sum::<f64>() / 3.0;
    Ok(EvalReport { per_class_f1, macro_favor_against, macro_all, counts, n_examples: gold.len() })
}
