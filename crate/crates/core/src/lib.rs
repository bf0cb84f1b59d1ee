//! Single-generation uncertainty scoring for LLM responses.
//!
//! Next-token probability mass is aggregated over tokens that share the
//! generated token's semantic cluster (precomputed offline from the token
//! embeddings) and over tokens whose normalized surface prefixes the rest of
//! the response. The per-step masses are multiplied and the sequence score is
//! one minus that product. Scores are evaluated against correctness labels
//! with AUROC and the prediction rejection ratio.
//!
//! Pipeline:
//!
//! 1. [`cluster::cluster_tokens`] partitions the vocabulary (offline).
//! 2. [`scorer::Scorer`] scores greedy-decode traces.
//! 3. [`evaluator::evaluate`] compares scores with labels.
//!
//! All inputs and outputs go through the file formats in [`artifact_io`].

pub mod artifact_io;
pub mod cli;
pub mod cluster;
pub mod evaluator;
pub mod scorer;
pub mod surface;

pub use artifact_io::{
    ArtifactError, ClusterAssignment, DecodeStep, EmbeddingMatrix, GenerationTrace, LabelSet,
    ScoreRow, ScoreTable, TokenRecord, VocabTable,
};
pub use cluster::{cluster_tokens, ClusterConfig, ClusterError};
pub use evaluator::{auroc, evaluate, prr, EvalError, EvalReport};
pub use scorer::{Method, ScoreConfig, ScoreError, Scorer};
pub use surface::{decode_surface, normalize, NormalizedText, PrefixIndex};
