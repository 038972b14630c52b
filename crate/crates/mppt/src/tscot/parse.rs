//! Parsers for the two LLM response shapes: perspective lists and
//! explanation-plus-judgment texts.
//!
//! Both parsers are total over arbitrary unicode input: they either succeed
//! or return one of their declared errors, never panic.

use crate::corpus::StanceLabel;

use super::TscotError;

/// Normalized comparison key: case-folded, whitespace-collapsed.
pub(crate) fn normalize_item(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

fn strip_list_marker(line: &str) -> Option<&str> {
    let trimmed = line.trim_start();
    // Bulleted: "- item", "* item", "• item", "– item".
    for bullet in ['-', '*', '•', '–'] {
        if let Some(rest) = trimmed.strip_prefix(bullet) {
            if rest.starts_with(char::is_whitespace) {
                return Some(rest.trim_start());
            }
        }
    }
    // Numbered: "1. item", "2) item", "3: item", "(4) item".
    let body = trimmed.strip_prefix('(').unwrap_or(trimmed);
    let digits_end = body.find(|c: char| !c.is_ascii_digit())?;
    if digits_end == 0 {
        return None;
    }
    let rest = &body[digits_end..];
    for sep in ['.', ')', ':'] {
        if let Some(after) = rest.strip_prefix(sep) {
            return Some(after.trim_start());
        }
    }
    None
}

/// Drop per-item elaboration (after a colon or a spaced dash) and trailing
/// punctuation.
fn clean_item(item: &str) -> String {
    let mut s = item;
    if let Some(i) = s.find(':') {
        s = &s[..i];
    }
    for dash in [" - ", " – ", " — ", " -- "] {
        if let Some(i) = s.find(dash) {
            s = &s[..i];
        }
    }
    s.trim().trim_end_matches(['.', ',', ';', ':', '!', '?']).trim().to_string()
}

/// Extract exactly `gamma` perspective phrases from a list-shaped response.
///
/// Numbered/bulleted items are recognized and their markers stripped; when
/// no marker is found at all, every non-empty line counts as an item.
/// Surplus items beyond `gamma` are discarded; a shortfall is a
/// [`TscotError::CountMismatch`], and a post-normalization collision within
/// the kept items is a [`TscotError::DuplicatePerspectives`].
pub fn parse_perspectives(response: &str, gamma: usize) -> Result<Vec<String>, TscotError> {
    let marked: Vec<String> = response
        .lines()
        .filter_map(strip_list_marker)
        .map(clean_item)
        .filter(|s| !s.is_empty())
        .collect();
    let items: Vec<String> = if marked.is_empty() {
        response.lines().map(clean_item).filter(|s| !s.is_empty()).collect()
    } else {
        marked
    };
    if items.len() < gamma {
        return Err(TscotError::CountMismatch { expected: gamma, found: items.len() });
    }
    let kept: Vec<String> = items.into_iter().take(gamma).collect();
    let mut seen = std::collections::BTreeSet::new();
    for item in &kept {
        if !seen.insert(normalize_item(item)) {
            return Err(TscotError::DuplicatePerspectives { item: item.clone() });
        }
    }
    Ok(kept)
}

/// Byte ranges of the non-empty sentences of `s`, split at `.`, `!`, `?`,
/// and newlines (terminator included in the range).
fn sentence_ranges(s: &str) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    let mut start = 0;
    for (i, ch) in s.char_indices() {
        if matches!(ch, '.' | '!' | '?' | '\n') {
            let end = i + ch.len_utf8();
            if !s[start..end].trim().is_empty() {
                ranges.push((start, end));
            }
            start = end;
        }
    }
    if !s[start..].trim().is_empty() {
        ranges.push((start, s.len()));
    }
    ranges
}

/// Last judgment word found in `sentence`, if any.
fn judgment_in(sentence: &str) -> Option<StanceLabel> {
    sentence
        .split(|c: char| !c.is_alphanumeric())
        .filter_map(StanceLabel::from_word_or_synonym)
        .next_back()
}

/// Split an explanation response into analysis text and the trailing
/// positional judgment.
///
/// The final two sentences are scanned (later sentence preferred) for a
/// case-insensitive judgment word — favor/against/none or the synonyms
/// pro/con/neutral. On a match the judgment sentence is removed from the
/// returned text. A response that is nothing but a judgment is
/// [`TscotError::EmptyExplanation`].
pub fn parse_explanation(response: &str) -> Result<(String, Option<StanceLabel>), TscotError> {
    if response.trim().is_empty() {
        return Err(TscotError::EmptyExplanation);
    }
    let ranges = sentence_ranges(response);
    for &(start, end) in ranges.iter().rev().take(2) {
        if let Some(judgment) = judgment_in(&response[start..end]) {
            let mut text = String::with_capacity(response.len());
            text.push_str(&response[..start]);
            text.push_str(&response[end..]);
            let text = text.trim().to_string();
            if text.is_empty() {
                return Err(TscotError::EmptyExplanation);
            }
            return Ok((text, Some(judgment)));
        }
    }
    Ok((response.trim().to_string(), None))
}
