//! Greedy-longest-match wordpiece tokenizer over an explicit vocabulary.
//!
//! The basic pass lowercases (optionally), splits on whitespace, and
//! separates punctuation; the wordpiece pass splits each word into the
//! longest matching vocabulary pieces with `##` continuations, falling back
//! to `[UNK]` for the whole word. Special tokens survive both passes
//! verbatim, and every emitted token carries its source character span so
//! callers can translate token trims back into character counts.

use std::collections::HashMap;
use std::path::Path;

use super::MultiplnError;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

pub const SPECIAL_TOKENS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

/// One tokenized piece: vocabulary id plus the half-open character span it
/// came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSpan {
    pub id: u32,
    /// Character (not byte) offsets into the tokenized text.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone)]
pub struct WordPieceTokenizer {
    vocab: Vec<String>,
    lookup: HashMap<String, u32>,
    lowercase: bool,
    pad_id: u32,
    unk_id: u32,
    cls_id: u32,
    sep_id: u32,
    mask_id: u32,
}

impl WordPieceTokenizer {
    /// Build from an ordered vocabulary. All five special tokens must be
    /// present; duplicates are rejected.
    pub fn new(vocab: Vec<String>, lowercase: bool) -> Result<WordPieceTokenizer, MultiplnError> {
        let mut lookup = HashMap::with_capacity(vocab.len());
        for (i, token) in vocab.iter().enumerate() {
            if lookup.insert(token.clone(), i as u32).is_some() {
                return Err(MultiplnError::BadVocab {
                    reason: format!("duplicate token `{token}`"),
                });
            }
        }
        let find = |tok: &str| {
            lookup.get(tok).copied().ok_or_else(|| MultiplnError::BadVocab {
                reason: format!("missing special token `{tok}`"),
            })
        };
        Ok(WordPieceTokenizer {
            pad_id: find(PAD)?,
            unk_id: find(UNK)?,
            cls_id: find(CLS)?,
            sep_id: find(SEP)?,
            mask_id: find(MASK)?,
            vocab,
            lookup,
            lowercase,
        })
    }

    pub fn from_vocab_file(
        path: &Path,
        lowercase: bool,
    ) -> Result<WordPieceTokenizer, MultiplnError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|source| MultiplnError::Io { path: path.display().to_string(), source })?;
        let vocab: Vec<String> =
            raw.lines().map(str::to_string).filter(|l| !l.is_empty()).collect();
        WordPieceTokenizer::new(vocab, lowercase)
    }

    pub fn write_vocab_file(&self, path: &Path) -> Result<(), MultiplnError> {
        let mut body = self.vocab.join("\n");
        body.push('\n');
        std::fs::write(path, body)
            .map_err(|source| MultiplnError::Io { path: path.display().to_string(), source })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn token(&self, id: u32) -> &str {
        &self.vocab[id as usize]
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.lookup.get(token).copied()
    }

    pub fn pad_id(&self) -> u32 {
        self.pad_id
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    pub fn cls_id(&self) -> u32 {
        self.cls_id
    }

    pub fn sep_id(&self) -> u32 {
        self.sep_id
    }

    pub fn mask_id(&self) -> u32 {
        self.mask_id
    }

    /// Wordpiece-split one basic token (no whitespace inside). Returns
    /// `None` when no legal split exists — the caller emits `[UNK]` for the
    /// whole word.
    fn wordpiece(&self, word: &str) -> Option<Vec<u32>> {
        let chars: Vec<char> = word.chars().collect();
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut matched = None;
            while end > start {
                let mut candidate: String = chars[start..end].iter().collect();
                if start > 0 {
                    candidate = format!("##{candidate}");
                }
                if let Some(&id) = self.lookup.get(&candidate) {
                    matched = Some((id, end));
                    break;
                }
                end -= 1;
            }
            let (id, end) = matched?;
            pieces.push(id);
            start = end;
        }
        Some(pieces)
    }

    /// Full tokenization with character spans. Special tokens embedded in
    /// the text (e.g. a literal `[MASK]`) are emitted atomically.
    pub fn encode_with_spans(&self, text: &str) -> Vec<TokenSpan> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        'outer: while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            // Atomic special tokens, matched verbatim (case-sensitive).
            if c == '[' {
                for special in SPECIAL_TOKENS {
                    let len = special.chars().count();
                    if i + len <= chars.len()
                        && chars[i..i + len].iter().collect::<String>() == special
                    {
                        out.push(TokenSpan { id: self.lookup[special], start: i, end: i + len });
                        i += len;
                        continue 'outer;
                    }
                }
            }
            if c.is_alphanumeric() {
                let start = i;
                while i < chars.len() && chars[i].is_alphanumeric() {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let word = if self.lowercase { word.to_lowercase() } else { word };
                match self.wordpiece(&word) {
                    Some(ids) => {
                        // Spans of the pieces partition the word; piece char
                        // lengths are computed net of the ## prefix.
                        let mut pos = start;
                        for id in ids {
                            let piece = self.token(id);
                            let len = piece.trim_start_matches('#').chars().count();
                            // Lowercasing can change char counts in exotic
                            // scripts; clamp to the word boundary.
                            let end = (pos + len).min(i);
                            out.push(TokenSpan { id, start: pos, end });
                            pos = end;
                        }
                    }
                    None => out.push(TokenSpan { id: self.unk_id, start, end: i }),
                }
            } else {
                // Punctuation and symbols: one token per char.
                let id = self.lookup.get(&c.to_string()).copied().unwrap_or(self.unk_id);
                out.push(TokenSpan { id, start: i, end: i + 1 });
                i += 1;
            }
        }
        out
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.encode_with_spans(text).into_iter().map(|t| t.id).collect()
    }

    pub fn tokens(&self, text: &str) -> Vec<String> {
        self.encode(text).into_iter().map(|id| self.token(id).to_string()).collect()
    }
}

impl crate::verbalizer::WordVocab for WordPieceTokenizer {
    fn word_unit_ids(&self, word: &str) -> Option<Vec<u32>> {
        let normalized = if self.lowercase { word.to_lowercase() } else { word.to_string() };
        let ids = self.wordpiece(&normalized)?;
        if ids.is_empty() {
            return None;
        }
        Some(ids)
    }
}
