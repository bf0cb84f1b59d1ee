//! Inference-time scoring.
//!
//! At every step the candidate set is the generated token's cluster (or just
//! the token itself when it was excluded from clustering) together with every
//! token whose normalized surface prefixes the remaining response. The step
//! mass is the recorded probability of the candidates, and the sequence score
//! is `1 - prod(mass_i)`, accumulated in log space.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact_io::{
    ArtifactError, ClusterAssignment, DecodeStep, GenerationTrace, ScoreRow, ScoreTable, VocabTable,
};
use crate::surface::{PrefixIndex, SurfaceError, TraceText};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("token {token_id} outside the {size}-token assignment")]
    TokenOutOfRange { token_id: u32, size: usize },
    #[error("assignment covers {assignment} tokens but the vocabulary has {vocab}")]
    VocabMismatch { assignment: usize, vocab: usize },
    #[error("perplexity is undefined for an empty response")]
    EmptyResponse,
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error("unknown method {0:?} (expected stc, probability or perplexity)")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Stc,
    Probability,
    Perplexity,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Stc => "stc",
            Method::Probability => "probability",
            Method::Perplexity => "perplexity",
        })
    }
}

impl FromStr for Method {
    type Err = ScoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "stc" => Ok(Method::Stc),
            "probability" => Ok(Method::Probability),
            "perplexity" => Ok(Method::Perplexity),
            other => Err(ScoreError::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub method: Method,
    pub use_embedding_clusters: bool,
    pub use_prefix: bool,
}

impl ScoreConfig {
    pub fn new(method: Method) -> Self {
        ScoreConfig {
            method,
            use_embedding_clusters: true,
            use_prefix: true,
        }
    }

    /// Method name written to score tables. Ablated STC variants get a
    /// suffix so they can share a table with the full method.
    pub fn label(&self) -> String {
        match (self.method, self.use_embedding_clusters, self.use_prefix) {
            (Method::Stc, true, true) => "stc".into(),
            (Method::Stc, false, true) => "stc-no-clusters".into(),
            (Method::Stc, true, false) => "stc-no-prefix".into(),
            (Method::Stc, false, false) => "stc-no-clusters-no-prefix".into(),
            (m, _, _) => m.to_string(),
        }
    }
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig::new(Method::Stc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMass {
    pub position: usize,
    pub mass: f64,
    pub candidate_count: usize,
}

/// `1 - prod(values)` via a log-space sum in iteration order. Any zero makes
/// the product zero and the result exactly 1.
fn one_minus_product(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut log_sum = 0.0f64;
    for v in values {
        if v <= 0.0 {
            return 1.0;
        }
        log_sum += v.ln();
    }
    1.0 - log_sum.exp()
}

/// Tokens sharing `token_id`'s cluster, or `{token_id}` when it is excluded.
pub fn embedding_set(token_id: u32, assignment: &ClusterAssignment) -> Result<Vec<u32>, ScoreError> {
    let size = assignment.vocab_size();
    if token_id as usize >= size {
        return Err(ScoreError::TokenOutOfRange { token_id, size });
    }
    Ok(match assignment.cluster_of(token_id) {
        None => vec![token_id],
        Some(c) => assignment
            .labels()
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(c))
            .map(|(t, _)| t as u32)
            .collect(),
    })
}

/// Recorded probability of `candidates`, summed in ascending token order
/// and clamped to [0, 1]. Tokens absent from the sparse distribution count
/// as 0.
pub fn step_mass(step: &DecodeStep, candidates: &BTreeSet<u32>) -> StepMass {
    let mass: f64 = step
        .dist
        .iter()
        .filter(|(t, _)| candidates.contains(t))
        .map(|&(_, p)| p)
        .sum();
    StepMass {
        position: step.position as usize,
        mass: mass.clamp(0.0, 1.0),
        candidate_count: candidates.len(),
    }
}

/// `1 - prod p(y_i)` over the recorded generated-token probabilities.
pub fn probability_score(trace: &GenerationTrace) -> f64 {
    one_minus_product(trace.steps.iter().map(DecodeStep::generated_prob))
}

/// `exp(-mean log p(y_i))`; `+inf` when some `p(y_i)` is 0.
pub fn perplexity_score(trace: &GenerationTrace) -> Result<f64, ScoreError> {
    if trace.is_empty() {
        return Err(ScoreError::EmptyResponse);
    }
    let mut log_sum = 0.0;
    for step in &trace.steps {
        let p = step.generated_prob();
        if p <= 0.0 {
            return Ok(f64::INFINITY);
        }
        log_sum += p.ln();
    }
    Ok((-log_sum / trace.len() as f64).exp())
}

/// Scores traces against one vocabulary and cluster assignment.
pub struct Scorer<'a> {
    vocab: &'a VocabTable,
    assignment: &'a ClusterAssignment,
    members: Vec<Vec<u32>>,
    // `ids[t] == t`; excluded tokens borrow their one-element set from here.
    ids: Vec<u32>,
    prefix: PrefixIndex,
}

impl<'a> Scorer<'a> {
    pub fn new(vocab: &'a VocabTable, assignment: &'a ClusterAssignment) -> Result<Self, ScoreError> {
        if vocab.len() != assignment.vocab_size() {
            return Err(ScoreError::VocabMismatch {
                assignment: assignment.vocab_size(),
                vocab: vocab.len(),
            });
        }
        Ok(Scorer {
            vocab,
            assignment,
            members: assignment.members(),
            ids: (0..vocab.len() as u32).collect(),
            prefix: PrefixIndex::build(vocab),
        })
    }

    pub fn embedding_set(&self, token_id: u32) -> Result<&[u32], ScoreError> {
        let size = self.assignment.vocab_size();
        if token_id as usize >= size {
            return Err(ScoreError::TokenOutOfRange { token_id, size });
        }
        Ok(match self.assignment.cluster_of(token_id) {
            Some(c) => &self.members[c as usize],
            None => std::slice::from_ref(&self.ids[token_id as usize]),
        })
    }

    /// Candidate set for `step`, always containing the generated token.
    pub fn candidate_union(
        &self,
        step: &DecodeStep,
        text: &TraceText,
        cfg: &ScoreConfig,
    ) -> Result<BTreeSet<u32>, ScoreError> {
        let y = step.generated_token_id;
        let mut set = BTreeSet::from([y]);
        if cfg.use_embedding_clusters {
            set.extend(self.embedding_set(y)?.iter().copied());
        }
        if cfg.use_prefix {
            let remaining = text.remaining(step.position as usize)?;
            set.extend(self.prefix.prefix_set(remaining));
        }
        Ok(set)
    }

    pub fn step_masses(
        &self,
        trace: &GenerationTrace,
        cfg: &ScoreConfig,
    ) -> Result<Vec<StepMass>, ScoreError> {
        let text = TraceText::new(trace, self.vocab)?;
        trace
            .steps
            .iter()
            .map(|step| Ok(step_mass(step, &self.candidate_union(step, &text, cfg)?)))
            .collect()
    }

    /// `1 - prod(step mass)`; 0 for an empty response.
    pub fn sequence_uncertainty(
        &self,
        trace: &GenerationTrace,
        cfg: &ScoreConfig,
    ) -> Result<f64, ScoreError> {
        let masses = self.step_masses(trace, cfg)?;
        Ok(one_minus_product(masses.iter().map(|s| s.mass)))
    }

    pub fn score(&self, trace: &GenerationTrace, cfg: &ScoreConfig) -> Result<f64, ScoreError> {
        match cfg.method {
            Method::Stc => self.sequence_uncertainty(trace, cfg),
            Method::Probability => {
                // Token ids are still checked so every method rejects the same traces.
                TraceText::new(trace, self.vocab)?;
                Ok(probability_score(trace))
            }
            Method::Perplexity => {
                TraceText::new(trace, self.vocab)?;
                perplexity_score(trace)
            }
        }
    }
}

/// A sample (or one method on a sample) that could not be scored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkipRecord {
    /// Unknown when the line itself failed to parse.
    pub sample_id: Option<String>,
    pub method: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct CorpusScores {
    pub table: ScoreTable,
    pub skipped: Vec<SkipRecord>,
    pub samples: usize,
}

const BATCH: usize = 256;

fn score_batch(
    scorer: &Scorer<'_>,
    batch: Vec<Result<GenerationTrace, ArtifactError>>,
    cfgs: &[ScoreConfig],
) -> Vec<(Vec<ScoreRow>, Vec<SkipRecord>)> {
    batch
        .into_par_iter()
        .map(|item| {
            let trace = match item {
                Ok(t) => t,
                Err(e) => {
                    return (
                        Vec::new(),
                        vec![SkipRecord { sample_id: None, method: None, reason: e.to_string() }],
                    )
                }
            };
            let mut rows = Vec::with_capacity(cfgs.len());
            let mut skips = Vec::new();
            for cfg in cfgs {
                match scorer.score(&trace, cfg) {
                    Ok(score) => rows.push(ScoreRow {
                        sample_id: trace.sample_id.clone(),
                        method: cfg.label(),
                        score,
                    }),
                    Err(e) => skips.push(SkipRecord {
                        sample_id: Some(trace.sample_id.clone()),
                        method: Some(cfg.label()),
                        reason: e.to_string(),
                    }),
                }
            }
            (rows, skips)
        })
        .collect()
}

/// Scores every trace with every config. Traces are pulled in fixed-size
/// batches and scored in parallel; the result does not depend on the number
/// of worker threads.
pub fn score_corpus<I>(
    traces: I,
    scorer: &Scorer<'_>,
    cfgs: &[ScoreConfig],
) -> Result<CorpusScores, ArtifactError>
where
    I: IntoIterator<Item = Result<GenerationTrace, ArtifactError>>,
{
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut samples = 0;
    let mut iter = traces.into_iter().peekable();
    while iter.peek().is_some() {
        let batch: Vec<_> = iter.by_ref().take(BATCH).collect();
        samples += batch.len();
        for (r, s) in score_batch(scorer, batch, cfgs) {
            rows.extend(r);
            skipped.extend(s);
        }
    }
    Ok(CorpusScores {
        table: ScoreTable::new(rows)?,
        skipped,
        samples,
    })
}
