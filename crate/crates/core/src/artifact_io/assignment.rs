//! `clusters.stc`: token → cluster assignment.
//!
//! The first line is a JSON object ([`AssignmentMeta`]). It is followed by
//! exactly `vocab_size` rows `token_id cluster_id`, in token order, with
//! `-1` marking tokens excluded from clustering. `digest` is the SHA-256 of
//! the row block.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{open, sha256_hex, ArtifactError, Locus, VocabTable};
use crate::cluster::{Algorithm, ClusterConfig, EmbeddingMode, Linkage, Metric};

pub const ASSIGNMENT_FORMAT: &str = "stc-clusters/1";
/// On-disk encoding of an excluded token.
pub const EXCLUDED: i64 = -1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentMeta {
    pub format: String,
    pub vocab_size: usize,
    pub k: usize,
    pub clusterable: usize,
    pub algorithm: Algorithm,
    pub linkage: Linkage,
    pub metric: Metric,
    pub embedding_mode: EmbeddingMode,
    pub seed: u64,
    /// Content digests of the files the assignment was computed from.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    pub config_fingerprint: String,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    labels: Vec<Option<u32>>,
    meta: AssignmentMeta,
}

fn render_body(labels: &[Option<u32>]) -> String {
    let mut body = String::with_capacity(labels.len() * 10);
    for (t, l) in labels.iter().enumerate() {
        match l {
            Some(c) => writeln!(body, "{t} {c}"),
            None => writeln!(body, "{t} {EXCLUDED}"),
        }
        .expect("writing to a String cannot fail");
    }
    body
}

fn check_partition(labels: &[Option<u32>], k: usize) -> Result<usize, String> {
    let mut counts = vec![0usize; k];
    for (t, l) in labels.iter().enumerate() {
        if let Some(c) = *l {
            let c = c as usize;
            if c >= k {
                return Err(format!("token {t} has cluster {c}, outside [0, {k})"));
            }
            counts[c] += 1;
        }
    }
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(format!("cluster {empty} has no members"));
    }
    Ok(counts.iter().sum())
}

fn fingerprint(meta: &AssignmentMeta) -> String {
    let resolved = serde_json::json!({
        "algorithm": meta.algorithm,
        "linkage": meta.linkage,
        "metric": meta.metric,
        "embedding_mode": meta.embedding_mode,
        "seed": meta.seed,
        "k": meta.k,
        "inputs": meta.inputs,
    });
    sha256_hex(resolved.to_string().as_bytes())
}

impl ClusterAssignment {
    /// Validates `labels` as a partition into `k` nonempty clusters and
    /// derives the meta record from `cfg`.
    pub fn new(
        labels: Vec<Option<u32>>,
        k: usize,
        cfg: &ClusterConfig,
        inputs: BTreeMap<String, String>,
    ) -> Result<Self, ArtifactError> {
        let clusterable = check_partition(&labels, k).map_err(ArtifactError::Invalid)?;
        let mut meta = AssignmentMeta {
            format: ASSIGNMENT_FORMAT.to_string(),
            vocab_size: labels.len(),
            k,
            clusterable,
            algorithm: cfg.algorithm,
            linkage: cfg.linkage,
            metric: cfg.metric,
            embedding_mode: cfg.embedding_mode,
            seed: cfg.seed,
            inputs,
            config_fingerprint: String::new(),
            digest: sha256_hex(render_body(&labels).as_bytes()),
        };
        meta.config_fingerprint = fingerprint(&meta);
        Ok(ClusterAssignment { labels, meta })
    }

    pub fn k(&self) -> usize {
        self.meta.k
    }

    pub fn vocab_size(&self) -> usize {
        self.labels.len()
    }

    /// Cluster of `token_id`; `None` when excluded. Panics when out of range.
    pub fn cluster_of(&self, token_id: u32) -> Option<u32> {
        self.labels[token_id as usize]
    }

    pub fn labels(&self) -> &[Option<u32>] {
        &self.labels
    }

    pub fn meta(&self) -> &AssignmentMeta {
        &self.meta
    }

    /// Member lists per cluster, ascending token ids.
    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.meta.k];
        for (t, l) in self.labels.iter().enumerate() {
            if let Some(c) = *l {
                out[c as usize].push(t as u32);
            }
        }
        out
    }

    /// Serialized file contents.
    pub fn to_file_string(&self) -> String {
        let mut out = serde_json::to_string(&self.meta).expect("meta always serializes");
        out.push('\n');
        out.push_str(&render_body(&self.labels));
        out
    }
}

pub fn save_assignment(a: &ClusterAssignment, path: impl AsRef<Path>) -> Result<(), ArtifactError> {
    let path = path.as_ref();
    fs::write(path, a.to_file_string()).map_err(|e| ArtifactError::io(path, e))
}

/// Loads an assignment; when `vocab` is given its size must match.
pub fn load_assignment(
    path: impl AsRef<Path>,
    vocab: Option<&VocabTable>,
) -> Result<ClusterAssignment, ArtifactError> {
    let path = path.as_ref();
    let mut lines = open(path)?.lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| ArtifactError::io(path, e))?,
        None => return Err(ArtifactError::format(path, Locus::Line(1), "missing meta header")),
    };
    let meta: AssignmentMeta = serde_json::from_str(&header)
        .map_err(|e| ArtifactError::format(path, Locus::Line(1), format!("malformed meta: {e}")))?;
    if meta.format != ASSIGNMENT_FORMAT {
        return Err(ArtifactError::format(
            path,
            Locus::Line(1),
            format!("unsupported format {:?}", meta.format),
        ));
    }
    if let Some(v) = vocab {
        if v.len() != meta.vocab_size {
            return Err(ArtifactError::Mismatch(format!(
                "{}: assignment covers {} tokens but the vocabulary has {}",
                path.display(),
                meta.vocab_size,
                v.len()
            )));
        }
    }

    let mut labels = Vec::with_capacity(meta.vocab_size);
    let mut body = String::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line.map_err(|e| ArtifactError::io(path, e))?;
        let bad = |m: String| ArtifactError::format(path, Locus::Line(line_no), m);
        let mut fields = line.split(' ');
        let (Some(t), Some(c), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(bad(format!("expected `token_id cluster_id`, got {line:?}")));
        };
        let t: usize = t.parse().map_err(|_| bad(format!("bad token_id {t:?}")))?;
        let c: i64 = c.parse().map_err(|_| bad(format!("bad cluster_id {c:?}")))?;
        if t != labels.len() {
            return Err(bad(format!("expected token_id {}, got {t}", labels.len())));
        }
        let label = match c {
            EXCLUDED => None,
            c if c >= 0 && (c as usize) < meta.k => Some(c as u32),
            c => return Err(bad(format!("cluster_id {c} outside [0, {})", meta.k))),
        };
        labels.push(label);
        body.push_str(&line);
        body.push('\n');
    }
    if labels.len() != meta.vocab_size {
        return Err(ArtifactError::format(
            path,
            Locus::File,
            format!("expected {} rows, found {}", meta.vocab_size, labels.len()),
        ));
    }
    if sha256_hex(body.as_bytes()) != meta.digest {
        return Err(ArtifactError::format(path, Locus::File, "content digest mismatch"));
    }
    let clusterable = check_partition(&labels, meta.k)
        .map_err(|m| ArtifactError::format(path, Locus::File, m))?;
    if clusterable != meta.clusterable {
        return Err(ArtifactError::format(
            path,
            Locus::Line(1),
            format!("meta claims {} clustered tokens, found {clusterable}", meta.clusterable),
        ));
    }
    Ok(ClusterAssignment { labels, meta })
}
