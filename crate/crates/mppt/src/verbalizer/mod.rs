//! Label-word sets, lexicon expansion, and label-probability aggregation.
//!
//! A verbalizer maps each stance label to an ordered, pairwise-disjoint set
//! of label words. The base verbalizer is the three canonical words; a
//! lexicon of semantically related words can expand each label's set.
//! [`materialize`] resolves the words to classifier-vocabulary token units,
//! and [`aggregate_mu`] folds per-word probabilities into per-label
//! probabilities.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::StanceLabel;

#[derive(Debug, Error)]
pub enum VerbalizerError {
    #[error("label `{label}` lost all of its word units during materialization")]
    LabelEmptied { label: StanceLabel },
    #[error("lexicon parse error at line {line}: {reason}")]
    LexiconParse { line: usize, reason: String },
    #[error("invalid verbalizer: {reason}")]
    Invalid { reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Ordered label-word sets, one per stance label, pairwise disjoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verbalizer {
    entries: BTreeMap<StanceLabel, Vec<String>>,
    expansion_limit: usize,
}

impl Verbalizer {
    /// Build from explicit word lists, checking the invariants: every label
    /// non-empty and containing its canonical word, sets disjoint
    /// (case-insensitively), no duplicates within a set.
    pub fn from_entries(
        entries: BTreeMap<StanceLabel, Vec<String>>,
        expansion_limit: usize,
    ) -> Result<Verbalizer, VerbalizerError> {
        let mut claimed: BTreeSet<String> = BTreeSet::new();
        for label in StanceLabel::ALL {
            let words = entries.get(&label).ok_or_else(|| VerbalizerError::Invalid {
                reason: format!("label `{label}` has no word list"),
            })?;
            if !words.iter().any(|w| w.eq_ignore_ascii_case(label.canonical_word())) {
                return Err(VerbalizerError::Invalid {
                    reason: format!("label `{label}` is missing its canonical word"),
                });
            }
            for word in words {
                if !claimed.insert(word.to_lowercase()) {
                    return Err(VerbalizerError::Invalid {
                        reason: format!("word `{word}` appears under two labels or twice"),
                    });
                }
            }
        }
        Ok(Verbalizer { entries, expansion_limit })
    }

    pub fn words(&self, label: StanceLabel) -> &[String] {
        &self.entries[&label]
    }

    pub fn expansion_limit(&self) -> usize {
        self.expansion_limit
    }

    /// All (label, word) pairs in label order, words in insertion order.
    pub fn iter_words(&self) -> impl Iterator<Item = (StanceLabel, &str)> {
        StanceLabel::ALL
            .into_iter()
            .flat_map(move |label| self.entries[&label].iter().map(move |w| (label, w.as_str())))
    }

    pub fn total_words(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }
}

/// The base verbalizer: each label maps to exactly its canonical word.
pub fn base_verbalizer() -> Verbalizer {
    let entries = StanceLabel::ALL
        .into_iter()
        .map(|label| (label, vec![label.canonical_word().to_string()]))
        .collect();
    Verbalizer { entries, expansion_limit: 0 }
}

/// One lexicon row: a word and its related words, most related first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub word: String,
    pub related: Vec<String>,
}

/// Word → related-words lookup, case-insensitive on the key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, LexiconEntry>,
}

impl Lexicon {
    pub fn new() -> Lexicon {
        Lexicon::default()
    }

    pub fn insert(&mut self, word: &str, related: Vec<String>) {
        let key = word.trim().to_lowercase();
        let related = related
            .into_iter()
            .map(|w| w.trim().to_lowercase())
            .filter(|w| !w.is_empty() && *w != key)
            .collect();
        self.entries.insert(key.clone(), LexiconEntry { word: key, related });
    }

    pub fn get(&self, word: &str) -> Option<&LexiconEntry> {
        self.entries.get(&word.trim().to_lowercase())
    }

    /// Iterate entries in key order.
    pub fn iter(&self) -> impl Iterator<Item = &LexiconEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parse the TSV lexicon format: a `word<TAB>related` header line, then
    /// one row per word with related words comma-separated in similarity
    /// order. `#`-prefixed lines and blank lines are ignored.
    pub fn from_tsv_str(s: &str) -> Result<Lexicon, VerbalizerError> {
        let mut lexicon = Lexicon::new();
        let mut saw_header = false;
        for (i, line) in s.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(2, '\t');
            let word = parts.next().unwrap_or("").trim();
            let rest = parts.next();
            if !saw_header {
                if !word.eq_ignore_ascii_case("word") {
                    return Err(VerbalizerError::LexiconParse {
                        line: line_no,
                        reason: "expected `word<TAB>related` header".to_string(),
                    });
                }
                saw_header = true;
                continue;
            }
            let Some(related_csv) = rest else {
                return Err(VerbalizerError::LexiconParse {
                    line: line_no,
                    reason: "missing tab-separated related-word field".to_string(),
                });
            };
            if word.is_empty() {
                return Err(VerbalizerError::LexiconParse {
                    line: line_no,
                    reason: "empty word field".to_string(),
                });
            }
            if lexicon.get(word).is_some() {
                return Err(VerbalizerError::LexiconParse {
                    line: line_no,
                    reason: format!("duplicate entry for `{word}`"),
                });
            }
            let related: Vec<String> = related_csv.split(',').map(|w| w.to_string()).collect();
            lexicon.insert(word, related);
        }
        Ok(lexicon)
    }

    pub fn from_path(path: &Path) -> Result<Lexicon, VerbalizerError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|source| VerbalizerError::Io { path: path.display().to_string(), source })?;
        Lexicon::from_tsv_str(&raw)
    }

    /// The lexicon extract bundled with the crate, covering the three
    /// canonical label words and their neighborhoods. Swap in a full export
    /// via [`Lexicon::from_path`].
    pub fn bundled() -> Lexicon {
        Lexicon::from_tsv_str(include_str!("../../assets/senticnet_extract.tsv"))
            .expect("bundled lexicon parses")
    }
}

/// Expand each label's word set with up to `limit` related words drawn from
/// the lexicon entries of the words already in the set, in lexicon order.
///
/// A candidate already claimed by an earlier label (label order FAVOR,
/// AGAINST, NONE) or already present is skipped, so disjointness is
/// preserved. A label whose words have no lexicon entries is left
/// unexpanded with a logged warning.
pub fn expand(v: &Verbalizer, lexicon: &Lexicon, limit: usize) -> Verbalizer {
    let mut claimed: BTreeSet<String> = v.iter_words().map(|(_, w)| w.to_lowercase()).collect();
    let mut entries = BTreeMap::new();
    for label in StanceLabel::ALL {
        let seeds = v.words(label).to_vec();
        let mut words = seeds.clone();
        let mut added = 0usize;
        let mut any_entry = false;
        'seeds: for seed in &seeds {
            let Some(entry) = lexicon.get(seed) else { continue };
            any_entry = true;
            for candidate in &entry.related {
                if added == limit {
                    break 'seeds;
                }
                let key = candidate.to_lowercase();
                if claimed.contains(&key) {
                    continue;
                }
                claimed.insert(key);
                words.push(candidate.clone());
                added += 1;
            }
        }
        if limit > 0 && !any_entry {
            log::warn!("no lexicon entry for any `{label}` word; label left unexpanded");
        }
        entries.insert(label, words);
    }
    Verbalizer { entries, expansion_limit: limit }
}

/// Classifier-vocabulary access needed to materialize label words.
pub trait WordVocab {
    /// Sub-token ids for `word`, or `None` when the word cannot be
    /// represented (it tokenizes to the unknown token).
    fn word_unit_ids(&self, word: &str) -> Option<Vec<u32>>;
}

/// A label word resolved to backbone token ids. Multi-id units are averaged
/// at embedding time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordUnit {
    pub word: String,
    pub label: StanceLabel,
    pub token_ids: Vec<u32>,
}

/// The verbalizer resolved against a concrete vocabulary: a flat,
/// label-major unit list plus a record of the words that had to be dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaterializedVerbalizer {
    units: Vec<WordUnit>,
    pub dropped: Vec<(StanceLabel, String)>,
}

impl MaterializedVerbalizer {
    pub fn units(&self) -> &[WordUnit] {
        &self.units
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    /// Label index (0=favor, 1=against, 2=none) per unit, unit order.
    pub fn unit_label_indices(&self) -> Vec<usize> {
        self.units.iter().map(|u| u.label.index()).collect()
    }

    pub fn units_of(&self, label: StanceLabel) -> impl Iterator<Item = &WordUnit> {
        self.units.iter().filter(move |u| u.label == label)
    }

    /// Human-auditable dump: one line per unit, label-major.
    pub fn render_dump(&self) -> String {
        let mut out = String::new();
        for label in StanceLabel::ALL {
            out.push_str(&format!("{label}:\n"));
            for unit in self.units_of(label) {
                let ids: Vec<String> = unit.token_ids.iter().map(u32::to_string).collect();
                out.push_str(&format!("  {} [{}]\n", unit.word, ids.join(" ")));
            }
        }
        if !self.dropped.is_empty() {
            out.push_str("dropped:\n");
            for (label, word) in &self.dropped {
                out.push_str(&format!("  {word} ({label})\n"));
            }
        }
        out
    }
}

/// Resolve every verbalizer word to token ids under `vocab`. Words that
/// cannot be represented are dropped with a warning; a label losing all of
/// its words is an error.
pub fn materialize(
    v: &Verbalizer,
    vocab: &impl WordVocab,
) -> Result<MaterializedVerbalizer, VerbalizerError> {
    let mut units = Vec::new();
    let mut dropped = Vec::new();
    for label in StanceLabel::ALL {
        let before = units.len();
        for word in v.words(label) {
            match vocab.word_unit_ids(word) {
                Some(token_ids) if !token_ids.is_empty() => {
                    units.push(WordUnit { word: word.clone(), label, token_ids });
                }
                _ => {
                    log::warn!("dropping verbalizer word `{word}` ({label}): not in vocabulary");
                    dropped.push((label, word.clone()));
                }
            }
        }
        if units.len() == before {
            return Err(VerbalizerError::LabelEmptied { label });
        }
    }
    Ok(MaterializedVerbalizer { units, dropped })
}

/// How per-word probabilities fold into a label score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateMode {
    /// Sum of the label's word probabilities (default).
    #[default]
    Sum,
    /// Mean of the label's word probabilities, renormalized across labels.
    Mean,
}

/// Fold per-word probabilities into per-label probabilities.
///
/// With [`AggregateMode::Sum`] and a `delta` that is a distribution over
/// exactly the verbalizer's words, the output is a distribution by
/// construction. [`AggregateMode::Mean`] renormalizes across labels so the
/// output remains one.
pub fn aggregate_mu(
    delta: &BTreeMap<String, f64>,
    v: &Verbalizer,
    mode: AggregateMode,
) -> BTreeMap<StanceLabel, f64> {
    let mut scores = BTreeMap::new();
    for label in StanceLabel::ALL {
        let values: Vec<f64> =
            v.words(label).iter().filter_map(|w| delta.get(w).copied()).collect();
        let score = match mode {
            AggregateMode::Sum => values.iter().sum(),
            AggregateMode::Mean => {
                if values.is_empty() {
                    0.0
                } else {
                    values.iter().sum::<f64>() / values.len() as f64
                }
            }
        };
        scores.insert(label, score);
    }
    if mode == AggregateMode::Mean {
        let total: f64 = scores.values().sum();
        if total > 0.0 {
            for score in scores.values_mut() {
                *score /= total;
            }
        }
    }
    scores
}
