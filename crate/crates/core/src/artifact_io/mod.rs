//! File formats shared by every stage of the toolkit.
//!
//! | artifact            | format                                              |
//! |---------------------|-----------------------------------------------------|
//! | `*.stce`            | binary embedding matrix, see [`embedding`]          |
//! | `vocab.jsonl`       | one [`TokenRecord`] per line                        |
//! | `traces.jsonl`      | one [`GenerationTrace`] per line                    |
//! | `clusters.stc`      | JSON meta line + `token_id cluster_id` rows          |
//! | `labels.csv`        | `sample_id,label`                                   |
//! | `scores.csv`        | `sample_id,method,score`                            |
//!
//! Every parser reports the locus (byte offset or line number) of the first
//! violation it finds.

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

pub mod assignment;
pub mod embedding;
pub mod tables;
pub mod trace;
pub mod vocab;

pub use assignment::{load_assignment, save_assignment, AssignmentMeta, ClusterAssignment};
pub use embedding::{load_embedding_matrix, save_embedding_matrix, EmbeddingMatrix};
pub use tables::{read_labels, read_scores, write_scores, LabelSet, ScoreRow, ScoreTable};
pub use trace::{stream_traces, write_traces, DecodeStep, GenerationTrace, TraceStream};
pub use vocab::{load_vocab, read_stopwords, save_vocab, StopwordSet, TokenRecord, VocabTable};

/// Where in a file a problem was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Locus {
    Offset(u64),
    Line(usize),
    File,
}

impl fmt::Display for Locus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Locus::Offset(o) => write!(f, "byte offset {o}"),
            Locus::Line(l) => write!(f, "line {l}"),
            Locus::File => f.write_str("file"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {locus}: {message}", path.display())]
    Format {
        path: PathBuf,
        locus: Locus,
        message: String,
    },
    /// An in-memory value violates an artifact invariant.
    #[error("invalid artifact: {0}")]
    Invalid(String),
    #[error("size mismatch: {0}")]
    Mismatch(String),
}

impl ArtifactError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        ArtifactError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, locus: Locus, message: impl Into<String>) -> Self {
        ArtifactError::Format {
            path: path.to_path_buf(),
            locus,
            message: message.into(),
        }
    }

    /// Locus of a format error, if any.
    pub fn locus(&self) -> Option<Locus> {
        match self {
            ArtifactError::Format { locus, .. } => Some(*locus),
            _ => None,
        }
    }
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>, ArtifactError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| ArtifactError::io(path, e))
}

/// Hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of a file's contents, streamed.
pub fn file_digest(path: &Path) -> Result<String, ArtifactError> {
    let mut reader = open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = reader.read(&mut buf).map_err(|e| ArtifactError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
