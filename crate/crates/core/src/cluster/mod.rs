//! Offline vocabulary clustering.
//!
//! Stopword and numeral tokens are left out; the rest of the vocabulary is
//! partitioned into `k` clusters over its (by default concatenated input and
//! output) embeddings.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::artifact_io::{ArtifactError, ClusterAssignment, EmbeddingMatrix, StopwordSet, VocabTable};
use crate::surface::{is_numeral, token_key};

mod config;
pub mod distance;
pub mod hierarchy;
pub mod kmeans;
mod repr;

pub use config::{
    Algorithm, ClusterConfig, EmbeddingMode, Linkage, Metric, DEFAULT_K, DEFAULT_MEMORY_BUDGET,
};
pub use distance::{condensed_bytes, pairwise_condensed_distances, CondensedMatrix};
pub use hierarchy::{agglomerate, cut_to_k, nn_chain_agglomerate, Dendrogram, Merge};
pub use kmeans::{kmeans_cluster, SplitMix64};
pub use repr::build_representations;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("no clusterable tokens")]
    NoClusterableTokens,
    #[error("no points to cluster")]
    EmptySubset,
    #[error("k = {k} outside 1..={available}")]
    InvalidK { k: usize, available: usize },
    #[error("embedding mode {0} needs output embeddings")]
    MissingOutputEmbeddings(EmbeddingMode),
    #[error("{what}: expected {expected} tokens, found {found}")]
    VocabMismatch {
        expected: usize,
        found: usize,
        what: &'static str,
    },
    #[error(
        "distance matrix for {points} points needs {required_bytes} bytes, \
         over the memory budget of {budget_bytes} bytes"
    )]
    CapacityExceeded {
        points: usize,
        required_bytes: u64,
        budget_bytes: u64,
    },
    #[error("condensed matrix for {m} points needs {expected} entries, got {found}")]
    CondensedLength { m: usize, expected: u64, found: usize },
    #[error("distance entry {index} is {value}; distances must be finite and >= 0")]
    InvalidDistance { index: usize, value: f32 },
    #[error("token {token_id} outside a vocabulary of {vocab_size}")]
    TokenOutOfRange { token_id: usize, vocab_size: usize },
    #[error("{0} points exceed the supported maximum")]
    TooManyPoints(usize),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

/// Token ids that are neither stopwords nor numerals, ascending.
pub fn clusterable_indices(vocab: &VocabTable, stopwords: &StopwordSet) -> Vec<usize> {
    vocab
        .records()
        .iter()
        .filter(|r| !stopwords.contains(token_key(&r.surface).as_str()) && !is_numeral(&r.surface))
        .map(|r| r.token_id as usize)
        .collect()
}

#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub assignment: ClusterAssignment,
    pub clusterable: usize,
    pub elapsed: Duration,
}

impl ClusterOutcome {
    /// One-line timing report.
    pub fn report_line(&self) -> String {
        let meta = self.assignment.meta();
        format!(
            "clustered {} of {} tokens into {} clusters ({} {}, {} linkage, {} embeddings) in {:.3}s",
            self.clusterable,
            meta.vocab_size,
            meta.k,
            meta.algorithm,
            meta.metric,
            meta.linkage,
            meta.embedding_mode,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Runs the whole pre-computation stage.
///
/// `inputs` (name → content digest) is recorded in the assignment meta.
pub fn cluster_tokens(
    input_emb: &EmbeddingMatrix,
    output_emb: Option<&EmbeddingMatrix>,
    vocab: &VocabTable,
    stopwords: &StopwordSet,
    cfg: &ClusterConfig,
    inputs: BTreeMap<String, String>,
) -> Result<ClusterOutcome, ClusterError> {
    let start = Instant::now();
    if input_emb.vocab_size() != vocab.len() {
        return Err(ClusterError::VocabMismatch {
            expected: vocab.len(),
            found: input_emb.vocab_size(),
            what: "input embedding rows",
        });
    }
    let reps = build_representations(input_emb, output_emb, cfg.embedding_mode)?;
    let subset = clusterable_indices(vocab, stopwords);
    if subset.is_empty() {
        return Err(ClusterError::NoClusterableTokens);
    }
    if cfg.k == 0 || cfg.k > subset.len() {
        return Err(ClusterError::InvalidK {
            k: cfg.k,
            available: subset.len(),
        });
    }
    let leaf_labels = match cfg.algorithm {
        Algorithm::Agglomerative => {
            let d = pairwise_condensed_distances(&reps, &subset, cfg.metric, cfg.memory_budget)?;
            let dg = agglomerate(d, cfg.linkage)?;
            cut_to_k(&dg, cfg.k)?
        }
        Algorithm::Kmeans => kmeans_cluster(&reps, &subset, cfg.k, cfg.metric, cfg.seed)?,
    };
    let mut labels = vec![None; vocab.len()];
    for (&token, &label) in subset.iter().zip(&leaf_labels) {
        labels[token] = Some(label);
    }
    let assignment = ClusterAssignment::new(labels, cfg.k, cfg, inputs)?;
    Ok(ClusterOutcome {
        assignment,
        clusterable: subset.len(),
        elapsed: start.elapsed(),
    })
}
