//! Two-stage elicitation of analysis perspectives and per-text stance
//! explanations from an instruction-following LLM, with deterministic
//! response caching.
//!
//! Stage one asks for the γ angles from which people state a stance on a
//! target; stage two asks, per (text, perspective) pair, for an explanation
//! ending in a positional judgment. Every exchange is cached by content
//! key, so re-runs are free and interrupted explanation sweeps resume where
//! they stopped.

mod backend;
mod cache;
mod instructions;
mod parse;

pub(crate) use backend::PERSPECTIVE_BANK;
pub use backend::{Endpoint, HttpBackend, LlmBackend, LlmBackendConfig, MockBackend, Sampling};
pub use cache::{cache_key, CacheRecord, CacheStore};
pub use instructions::{build_s1, build_s2, reprompt_suffix};
pub use parse::{parse_explanation, parse_perspectives};

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{normalize_target, Example, StanceLabel};

/// γ must stay in this range: 1 covers the no-perspective ablation, 16
/// leaves headroom beyond the usual 2–8 sweep.
pub const GAMMA_RANGE: std::ops::RangeInclusive<usize> = 1..=16;

#[derive(Debug, Error)]
pub enum TscotError {
    #[error("expected {expected} perspectives, found {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("duplicate perspective after normalization: `{item}`")]
    DuplicatePerspectives { item: String },
    #[error("response contains no analysis text beyond the judgment")]
    EmptyExplanation,
    #[error("gamma must be in [1, 16], got {gamma}")]
    InvalidGamma { gamma: usize },
    #[error("{name} must be non-empty")]
    EmptyField { name: &'static str },
    #[error("example `{id}` targets `{found}` but the perspective set covers `{expected}`")]
    TargetMismatch { id: String, expected: String, found: String },
    #[error("llm backend unavailable after {attempts} attempts: {last_error}")]
    BackendUnavailable { attempts: u32, last_error: String },
    #[error("llm backend rejected the request (status {status}): {body}")]
    BackendRejected { status: u16, body: String },
    #[error("explanation generation left {} of {} cells unfilled", failed.len(), failed.len() + completed.len())]
    PartialCompletion { completed: Vec<Explanation>, failed: Vec<FailedCell> },
    #[error("mock fixture {path} is invalid: {reason}")]
    FixtureInvalid { path: String, reason: String },
    #[error("cache record {path} is corrupt: {reason}")]
    CacheCorrupt { path: String, reason: String },
    #[error("nle corpus {path} does not match its manifest: {reason}")]
    StaleCorpus { path: String, reason: String },
    #[error("nle corpus format error in {path}: {reason}")]
    CorpusFormat { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The γ perspectives elicited for one target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerspectiveSet {
    pub target: String,
    pub gamma: usize,
    pub perspectives: Vec<String>,
    /// Cache key of the response these perspectives were parsed from.
    pub provenance: String,
}

/// One explanation cell: what the LLM said about `example_id`'s text under
/// perspective `perspective_index`, judgment split off.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanation {
    pub example_id: String,
    pub perspective_index: usize,
    /// The perspective's text, copied in so rows are self-contained.
    pub perspective: String,
    pub text: String,
    /// The LLM's own trailing judgment. Diagnostic only — classification
    /// never reads it.
    pub llm_judgment: Option<StanceLabel>,
    /// Cache key of the underlying exchange.
    pub provenance: String,
}

/// An (example, perspective) cell that could not be filled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedCell {
    pub example_id: String,
    pub perspective_index: usize,
    pub error: String,
}

/// Complete an instruction through the cache: on a key hit the backend is
/// never called. Returns the response and its cache key.
pub fn cached_complete(
    backend: &dyn LlmBackend,
    cache: &CacheStore,
    instruction: &str,
) -> Result<(String, String), TscotError> {
    let key = cache_key(backend.model_id(), backend.sampling(), instruction);
    if let Some(record) = cache.get(&key)? {
        return Ok((record.response, key));
    }
    let response = backend.complete(instruction)?;
    let record = cache.put(backend.model_id(), backend.sampling(), instruction, &response)?;
    Ok((record.response, record.key))
}

/// Elicit the γ analysis perspectives for `target`.
///
/// Cache-first; on an item under-count the instruction is re-issued once
/// with an explicit count demand appended, then the error is surfaced.
pub fn elicit_perspectives(
    target: &str,
    gamma: usize,
    backend: &dyn LlmBackend,
    cache: &CacheStore,
) -> Result<PerspectiveSet, TscotError> {
    if target.trim().is_empty() {
        return Err(TscotError::EmptyField { name: "target" });
    }
    if !GAMMA_RANGE.contains(&gamma) {
        return Err(TscotError::InvalidGamma { gamma });
    }
    let instruction = build_s1(target, gamma);
    let (response, key) = cached_complete(backend, cache, &instruction)?;
    let (perspectives, provenance) = match parse_perspectives(&response, gamma) {
        Ok(items) => (items, key),
        Err(TscotError::CountMismatch { .. }) => {
            let retry_instruction = format!("{instruction}{}", reprompt_suffix(gamma));
            let (retry_response, retry_key) = cached_complete(backend, cache, &retry_instruction)?;
            (parse_perspectives(&retry_response, gamma)?, retry_key)
        }
        Err(e) => return Err(e),
    };
    Ok(PerspectiveSet { target: target.to_string(), gamma, perspectives, provenance })
}

fn explanation_cell(
    example: &Example,
    pset: &PerspectiveSet,
    perspective_index: usize,
    backend: &dyn LlmBackend,
    cache: &CacheStore,
) -> Result<Explanation, TscotError> {
    let perspective = &pset.perspectives[perspective_index];
    let instruction = build_s2(&pset.target, &example.text, perspective);
    let (response, provenance) = cached_complete(backend, cache, &instruction)?;
    let (text, llm_judgment) = parse_explanation(&response)?;
    Ok(Explanation {
        example_id: example.id.clone(),
        perspective_index,
        perspective: perspective.clone(),
        text,
        llm_judgment,
        provenance,
    })
}

/// Fill the |examples| × γ explanation grid, up to `parallelism` backend
/// requests in flight at once.
///
/// Output order is example-major regardless of completion order. When any
/// cell fails, the error carries both the completed explanations and the
/// failed cells; a re-run only re-requests the failures (everything else is
/// a cache hit).
pub fn generate_explanations(
    examples: &[Example],
    pset: &PerspectiveSet,
    backend: &dyn LlmBackend,
    cache: &CacheStore,
    parallelism: usize,
) -> Result<Vec<Explanation>, TscotError> {
    let expected = normalize_target(&pset.target);
    for example in examples {
        if normalize_target(&example.target) != expected {
            return Err(TscotError::TargetMismatch {
                id: example.id.clone(),
                expected: pset.target.clone(),
                found: example.target.clone(),
            });
        }
    }
    let gamma = pset.gamma;
    let total = examples.len() * gamma;
    let mut slots: Vec<Option<Result<Explanation, FailedCell>>> = Vec::new();
    slots.resize_with(total, || None);
    let slots = Mutex::new(slots);
    let next = AtomicUsize::new(0);
    let workers = parallelism.max(1).min(total.max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let cell = next.fetch_add(1, Ordering::SeqCst);
                if cell >= total {
                    break;
                }
                let example = &examples[cell / gamma];
                let perspective_index = cell % gamma;
                let outcome = explanation_cell(example, pset, perspective_index, backend, cache)
                    .map_err(|e| FailedCell {
                        example_id: example.id.clone(),
                        perspective_index,
                        error: e.to_string(),
                    });
                slots.lock().expect("slot lock")[cell] = Some(outcome);
            });
        }
    });
    let slots = slots.into_inner().expect("slot lock");
    let mut completed = Vec::with_capacity(total);
    let mut failed = Vec::new();
    for outcome in slots {
        match outcome.expect("every cell visited") {
            Ok(explanation) => completed.push(explanation),
            Err(cell) => failed.push(cell),
        }
    }
    if failed.is_empty() {
        Ok(completed)
    } else {
        Err(TscotError::PartialCompletion { completed, failed })
    }
}

/// A generated explanation corpus: the perspective sets used and every
/// explanation cell, ready for prompt construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NleCorpus {
    pub gamma: usize,
    pub psets: Vec<PerspectiveSet>,
    pub explanations: Vec<Explanation>,
}

impl NleCorpus {
    pub fn pset_for(&self, target: &str) -> Option<&PerspectiveSet> {
        let wanted = normalize_target(target);
        self.psets.iter().find(|p| normalize_target(&p.target) == wanted)
    }

    /// Index explanations by (example id, perspective index).
    pub fn index(&self) -> BTreeMap<(&str, usize), &Explanation> {
        self.explanations
            .iter()
            .map(|e| ((e.example_id.as_str(), e.perspective_index), e))
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct NleManifest {
    gamma: usize,
    psets: Vec<PerspectiveSet>,
    n_rows: usize,
    corpus_sha256: String,
    created_at: u64,
}

fn manifest_path(corpus_path: &Path) -> std::path::PathBuf {
    corpus_path.with_extension("manifest.json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TscotError + '_ {
    move |source| TscotError::Io { path: path.display().to_string(), source }
}

const NLE_HEADER: [&str; 6] =
    ["example_id", "perspective_index", "perspective", "nle_text", "llm_judgment", "provenance"];

/// Write an explanation corpus as a TSV plus a manifest recording the
/// perspective sets and a digest of the TSV (so staleness is detectable).
pub fn write_nle_corpus(path: &Path, corpus: &NleCorpus) -> Result<(), TscotError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut writer = csv::WriterBuilder::new().delimiter(b'\t').from_writer(Vec::new());
    writer.write_record(NLE_HEADER).expect("in-memory write");
    for e in &corpus.explanations {
        writer
            .write_record([
                e.example_id.as_str(),
                &e.perspective_index.to_string(),
                &e.perspective,
                &e.text,
                e.llm_judgment.map(|j| j.canonical_word()).unwrap_or(""),
                &e.provenance,
            ])
            .expect("in-memory write");
    }
    let bytes = writer.into_inner().expect("in-memory flush");
    std::fs::write(path, &bytes).map_err(io_err(path))?;
    let manifest = NleManifest {
        gamma: corpus.gamma,
        psets: corpus.psets.clone(),
        n_rows: corpus.explanations.len(),
        corpus_sha256: hex::encode(Sha256::digest(&bytes)),
        created_at: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let manifest_file = manifest_path(path);
    std::fs::write(
        &manifest_file,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(io_err(&manifest_file))?;
    Ok(())
}

/// Read a corpus written by [`write_nle_corpus`], verifying the digest.
pub fn read_nle_corpus(path: &Path) -> Result<NleCorpus, TscotError> {
    let manifest_file = manifest_path(path);
    let manifest_raw = std::fs::read_to_string(&manifest_file).map_err(io_err(&manifest_file))?;
    let manifest: NleManifest =
        serde_json::from_str(&manifest_raw).map_err(|e| TscotError::CorpusFormat {
            path: manifest_file.display().to_string(),
            reason: e.to_string(),
        })?;
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let digest = hex::encode(Sha256::digest(&bytes));
    if digest != manifest.corpus_sha256 {
        return Err(TscotError::StaleCorpus {
            path: path.display().to_string(),
            reason: "tsv digest does not match the manifest (regenerate the corpus)".to_string(),
        });
    }
    let format_err =
        |reason: String| TscotError::CorpusFormat { path: path.display().to_string(), reason };
    let mut reader = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(bytes.as_slice());
    let headers = reader.headers().map_err(|e| format_err(e.to_string()))?.clone();
    if headers.iter().ne(NLE_HEADER) {
        return Err(format_err(format!("unexpected header: {headers:?}")));
    }
    let mut explanations = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format_err(e.to_string()))?;
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let perspective_index: usize = field(1)
            .parse()
            .map_err(|_| format_err(format!("row {}: bad perspective_index", i + 1)))?;
        if perspective_index >= manifest.gamma {
            return Err(format_err(format!(
                "row {}: perspective_index {perspective_index} ≥ gamma {}",
                i + 1,
                manifest.gamma
            )));
        }
        let llm_judgment = match field(4) {
            "" => None,
            word => Some(
                StanceLabel::from_canonical(word)
                    .ok_or_else(|| format_err(format!("row {}: bad judgment `{word}`", i + 1)))?,
            ),
        };
        explanations.push(Explanation {
            example_id: field(0).to_string(),
            perspective_index,
            perspective: field(2).to_string(),
            text: field(3).to_string(),
            llm_judgment,
            provenance: field(5).to_string(),
        });
    }
    if explanations.len() != manifest.n_rows {
        return Err(format_err(format!(
            "row count {} does not match manifest ({})",
            explanations.len(),
            manifest.n_rows
        )));
    }
    Ok(NleCorpus { gamma: manifest.gamma, psets: manifest.psets, explanations })
}
