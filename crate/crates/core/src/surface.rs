//! Token surfaces, case/space-insensitive normalization and prefix matching.
//!
//! A token `t` prefix-matches step `i` of a response when the normalized
//! surface of `t` is a nonempty prefix of the normalized text of the response
//! from `y_i` onward.

use std::ops::Deref;

use thiserror::Error;

use crate::artifact_io::{GenerationTrace, VocabTable};

/// Byte-level BPE space marker.
pub const GPT2_SPACE: char = '\u{0120}';
/// SentencePiece space marker.
pub const SENTENCEPIECE_SPACE: char = '\u{2581}';

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SurfaceError {
    #[error("position {position} outside 1..={len}")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("token id {token_id} outside a vocabulary of {vocab_size}")]
    UnknownToken { token_id: u32, vocab_size: usize },
}

/// Maps the tokenizer space markers to ASCII spaces.
pub fn decode_surface(raw: &str) -> String {
    raw.chars()
        .map(|c| match c {
            GPT2_SPACE | SENTENCEPIECE_SPACE => ' ',
            c => c,
        })
        .collect()
}

/// Case-folded text with every whitespace character removed.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NormalizedText(String);

impl NormalizedText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl Deref for NormalizedText {
    type Target = str;

    fn deref(&self) -> &str {
        &self.0
    }
}

// Simple (1:1) lowercase mapping; characters whose lowercase form expands to
// several code points are left as they are.
#[inline]
fn fold_char(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

pub fn normalize(s: &str) -> NormalizedText {
    NormalizedText(
        s.chars()
            .filter(|c| !c.is_whitespace())
            .map(fold_char)
            .collect(),
    )
}

/// Normalized form of a (possibly still marker-encoded) token surface.
pub fn token_key(surface: &str) -> NormalizedText {
    normalize(&decode_surface(surface))
}

/// `true` when the trimmed surface is nonempty and only ASCII digits.
pub fn is_numeral(surface: &str) -> bool {
    let decoded = decode_surface(surface);
    let trimmed = decoded.trim();
    !trimmed.is_empty() && trimmed.chars().all(|c| c.is_ascii_digit())
}

/// Normalized text of a whole response with the byte offset where each
/// step starts. Normalization works character by character, so the suffix
/// starting at step `i` is the normalized remaining text from `y_i` on.
#[derive(Debug, Clone)]
pub struct TraceText {
    text: String,
    starts: Vec<usize>,
}

impl TraceText {
    pub fn new(trace: &GenerationTrace, vocab: &VocabTable) -> Result<Self, SurfaceError> {
        let mut text = String::new();
        let mut starts = Vec::with_capacity(trace.len());
        for t in trace.generated_tokens() {
            let surface = vocab.surface(t).ok_or(SurfaceError::UnknownToken {
                token_id: t,
                vocab_size: vocab.len(),
            })?;
            starts.push(text.len());
            text.push_str(&token_key(surface));
        }
        Ok(TraceText { text, starts })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// Normalized text from step `position` (1-based) to the end.
    pub fn remaining(&self, position: usize) -> Result<&str, SurfaceError> {
        if position == 0 || position > self.starts.len() {
            return Err(SurfaceError::PositionOutOfRange {
                position,
                len: self.starts.len(),
            });
        }
        Ok(&self.text[self.starts[position - 1]..])
    }
}

pub fn remaining_text(
    trace: &GenerationTrace,
    vocab: &VocabTable,
    position: usize,
) -> Result<NormalizedText, SurfaceError> {
    let text = TraceText::new(trace, vocab)?;
    text.remaining(position).map(|s| NormalizedText(s.to_string()))
}

/// Vocabulary sorted by normalized surface, for prefix queries.
#[derive(Debug, Clone)]
pub struct PrefixIndex {
    keys: Vec<(String, u32)>,
    max_len: usize,
}

impl PrefixIndex {
    pub fn build(vocab: &VocabTable) -> Self {
        let mut keys: Vec<(String, u32)> = vocab
            .records()
            .iter()
            .map(|r| (token_key(&r.surface).into_string(), r.token_id))
            .filter(|(k, _)| !k.is_empty())
            .collect();
        keys.sort_unstable();
        let max_len = keys.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        PrefixIndex { keys, max_len }
    }

    /// Token ids whose normalized surface is a nonempty prefix of
    /// `remaining`, ascending. `remaining` must already be normalized.
    pub fn prefix_set(&self, remaining: &str) -> Vec<u32> {
        let mut out = Vec::new();
        let limit = remaining.len().min(self.max_len);
        for (idx, c) in remaining.char_indices() {
            let end = idx + c.len_utf8();
            if end > limit {
                break;
            }
            let prefix = &remaining[..end];
            let lo = self.keys.partition_point(|(k, _)| k.as_str() < prefix);
            out.extend(
                self.keys[lo..]
                    .iter()
                    .take_while(|(k, _)| k == prefix)
                    .map(|&(_, t)| t),
            );
        }
        out.sort_unstable();
        out
    }
}

/// Prefix-matched set at step `position`; builds a fresh index, so prefer
/// [`PrefixIndex`] when scoring many steps.
pub fn prefix_set(
    trace: &GenerationTrace,
    vocab: &VocabTable,
    position: usize,
) -> Result<Vec<u32>, SurfaceError> {
    let text = TraceText::new(trace, vocab)?;
    let remaining = text.remaining(position)?;
    Ok(PrefixIndex::build(vocab).prefix_set(remaining))
}
