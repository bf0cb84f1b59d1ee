use clap::ValueEnum;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Euclidean,
}

/// Inter-cluster distance rule.
///
/// `Single` is available for comparison runs but chains large, loose clusters
/// on token embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Average,
    Complete,
}

/// Which token representation to cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMode {
    /// Input (token embedding layer) rows.
    Input,
    /// Output (language-model head) rows.
    Output,
    /// Input and output rows side by side.
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Agglomerative,
    Kmeans,
}

macro_rules! display_via_value_enum {
    ($($t:ty),*) => {$(
        impl std::fmt::Display for $t {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.to_possible_value().expect("no skipped variants").get_name())
            }
        }
    )*};
}
display_via_value_enum!(Metric, Linkage, EmbeddingMode, Algorithm);

pub const DEFAULT_K: usize = 16_000;
/// 4 GiB.
pub const DEFAULT_MEMORY_BUDGET: u64 = 4 << 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k: usize,
    pub metric: Metric,
    pub linkage: Linkage,
    pub embedding_mode: EmbeddingMode,
    pub algorithm: Algorithm,
    /// Only used by k-means.
    pub seed: u64,
    /// Upper bound on the condensed distance matrix, in bytes.
    pub memory_budget: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: DEFAULT_K,
            metric: Metric::Cosine,
            linkage: Linkage::Complete,
            embedding_mode: EmbeddingMode::Concat,
            algorithm: Algorithm::Agglomerative,
            seed: 0,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}
