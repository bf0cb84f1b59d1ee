//! `vocab.jsonl` and stopword lists.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{open, ArtifactError, Locus};
use crate::surface::{is_numeral, token_key};

/// One vocabulary entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub token_id: u32,
    /// String as stored by the tokenizer, marker characters included.
    pub raw: String,
    /// Decoded, human-readable text. May be empty.
    pub surface: String,
    #[serde(default)]
    pub is_stopword: bool,
    #[serde(default)]
    pub is_numeral: bool,
}

/// Normalized stopwords.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StopwordSet(BTreeSet<String>);

impl StopwordSet {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        StopwordSet(
            words
                .into_iter()
                .map(|w| token_key(w.as_ref()).into_string())
                .filter(|w| !w.is_empty())
                .collect(),
        )
    }

    /// Membership of an already-normalized key.
    pub fn contains(&self, normalized: &str) -> bool {
        self.0.contains(normalized)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Reads a stopword file: one word per line, blank lines ignored.
pub fn read_stopwords(path: impl AsRef<Path>) -> Result<StopwordSet, ArtifactError> {
    let path = path.as_ref();
    let mut words = Vec::new();
    for line in open(path)?.lines() {
        words.push(line.map_err(|e| ArtifactError::io(path, e))?);
    }
    Ok(StopwordSet::new(words))
}

/// Vocabulary indexed by token id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabTable {
    records: Vec<TokenRecord>,
}

impl VocabTable {
    /// Builds a table from records whose ids must be exactly `0..len`.
    pub fn new(mut records: Vec<TokenRecord>) -> Result<Self, ArtifactError> {
        records.sort_by_key(|r| r.token_id);
        for (expected, rec) in records.iter().enumerate() {
            let id = rec.token_id as usize;
            if id != expected {
                return Err(ArtifactError::Invalid(if id < expected {
                    format!("duplicate token_id {id}")
                } else {
                    format!("missing token_id {expected}")
                }));
            }
        }
        Ok(VocabTable { records })
    }

    /// Builds a table from tokenizer strings, decoding surfaces and computing
    /// flags against `stopwords`.
    pub fn from_raw_tokens<I, S>(raw: I, stopwords: &StopwordSet) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let records = raw
            .into_iter()
            .enumerate()
            .map(|(id, raw)| {
                let raw = raw.into();
                let surface = crate::surface::decode_surface(&raw);
                TokenRecord {
                    token_id: id as u32,
                    raw,
                    surface,
                    is_stopword: false,
                    is_numeral: false,
                }
            })
            .collect();
        let mut table = VocabTable { records };
        table.refresh_flags(stopwords);
        table
    }

    /// Recomputes `is_stopword` and `is_numeral` from each surface.
    pub fn refresh_flags(&mut self, stopwords: &StopwordSet) {
        for rec in &mut self.records {
            rec.is_stopword = stopwords.contains(token_key(&rec.surface).as_str());
            rec.is_numeral = is_numeral(&rec.surface);
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, token_id: u32) -> Option<&TokenRecord> {
        self.records.get(token_id as usize)
    }

    pub fn surface(&self, token_id: u32) -> Option<&str> {
        self.get(token_id).map(|r| r.surface.as_str())
    }

    pub fn records(&self) -> &[TokenRecord] {
        &self.records
    }
}

pub fn load_vocab(path: impl AsRef<Path>) -> Result<VocabTable, ArtifactError> {
    let path = path.as_ref();
    let mut records: Vec<TokenRecord> = Vec::new();
    let mut seen_at: Vec<usize> = Vec::new();
    for (idx, line) in open(path)?.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| ArtifactError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TokenRecord = serde_json::from_str(&line).map_err(|e| {
            ArtifactError::format(path, Locus::Line(line_no), format!("malformed record: {e}"))
        })?;
        let id = rec.token_id as usize;
        if seen_at.len() <= id {
            seen_at.resize(id + 1, 0);
        }
        if seen_at[id] != 0 {
            return Err(ArtifactError::format(
                path,
                Locus::Line(line_no),
                format!("duplicate token_id {id} (first seen on line {})", seen_at[id]),
            ));
        }
        seen_at[id] = line_no;
        records.push(rec);
    }
    if let Some(missing) = seen_at.iter().position(|&l| l == 0) {
        return Err(ArtifactError::format(
            path,
            Locus::File,
            format!("missing token_id {missing}"),
        ));
    }
    VocabTable::new(records)
}

pub fn save_vocab(vocab: &VocabTable, path: impl AsRef<Path>) -> Result<(), ArtifactError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| ArtifactError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in vocab.records() {
        let line = serde_json::to_string(rec).expect("token records always serialize");
        writeln!(w, "{line}").map_err(|e| ArtifactError::io(path, e))?;
    }
    w.flush().map_err(|e| ArtifactError::io(path, e))
}
