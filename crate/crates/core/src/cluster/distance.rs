//! Condensed pairwise distances.
//!
//! Entry `(i, j)`, `i < j`, of an `m`-point set lives at
//! `m*i - i*(i+1)/2 + (j - i - 1)` (row-major upper triangle). Values are
//! stored in single precision; dot products and squared differences are
//! accumulated in `f64` in ascending coordinate order so that results do not
//! depend on the thread count.

use rayon::prelude::*;

use super::{ClusterError, Metric};
use crate::artifact_io::EmbeddingMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct CondensedMatrix {
    m: usize,
    data: Vec<f32>,
}

/// Number of entries for `m` points.
pub fn condensed_len(m: usize) -> u64 {
    let m = m as u64;
    m * m.saturating_sub(1) / 2
}

/// Bytes needed to hold the condensed matrix of `m` points.
pub fn condensed_bytes(m: usize) -> u64 {
    condensed_len(m).saturating_mul(std::mem::size_of::<f32>() as u64)
}

#[inline]
pub fn condensed_index(m: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < m);
    m * i - i * (i + 1) / 2 + (j - i - 1)
}

impl CondensedMatrix {
    pub fn new(m: usize, data: Vec<f32>) -> Result<Self, ClusterError> {
        if data.len() as u64 != condensed_len(m) {
            return Err(ClusterError::CondensedLength {
                m,
                expected: condensed_len(m),
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(ClusterError::InvalidDistance { index: pos, value: data[pos] });
        }
        Ok(CondensedMatrix { m, data })
    }

    /// Builds the matrix from a distance function over index pairs.
    pub fn from_fn(m: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self, ClusterError> {
        let mut data = Vec::with_capacity(condensed_len(m) as usize);
        for i in 0..m {
            for j in i + 1..m {
                data.push(f(i, j));
            }
        }
        Self::new(m, data)
    }

    pub fn points(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.data[condensed_index(self.m, i, j)],
            std::cmp::Ordering::Greater => self.data[condensed_index(self.m, j, i)],
            std::cmp::Ordering::Equal => 0.0,
        }
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn into_parts(self) -> (usize, Vec<f32>) {
        (self.m, self.data)
    }
}

#[inline]
fn cosine_from(dot: f64, na: f64, nb: f64) -> f32 {
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    let d = 1.0 - dot / (na * nb);
    d.clamp(0.0, 2.0) as f32
}

/// Fills `out[j - i - 1]` for every `j > i`.
fn fill_row(points: &[f32], dim: usize, norms: &[f64], metric: Metric, i: usize, out: &mut [f32]) {
    let a = &points[i * dim..(i + 1) * dim];
    let row = |j: usize| &points[j * dim..(j + 1) * dim];
    let first = i + 1;
    let mut j = first;
    // Four independent accumulators hide add latency; each pair's sum is still
    // taken sequentially over the coordinates.
    while j + 4 <= first + out.len() {
        let (b0, b1, b2, b3) = (row(j), row(j + 1), row(j + 2), row(j + 3));
        let mut acc = [0.0f64; 4];
        match metric {
            Metric::Cosine => {
                for c in 0..dim {
                    let x = a[c] as f64;
                    acc[0] += x * b0[c] as f64;
                    acc[1] += x * b1[c] as f64;
                    acc[2] += x * b2[c] as f64;
                    acc[3] += x * b3[c] as f64;
                }
                for (q, dot) in acc.iter().enumerate() {
                    out[j + q - first] = cosine_from(*dot, norms[i], norms[j + q]);
                }
            }
            Metric::Euclidean => {
                for c in 0..dim {
                    let x = a[c] as f64;
                    let d0 = x - b0[c] as f64;
                    let d1 = x - b1[c] as f64;
                    let d2 = x - b2[c] as f64;
                    let d3 = x - b3[c] as f64;
                    acc[0] += d0 * d0;
                    acc[1] += d1 * d1;
                    acc[2] += d2 * d2;
                    acc[3] += d3 * d3;
                }
                for (q, sq) in acc.iter().enumerate() {
                    out[j + q - first] = sq.sqrt() as f32;
                }
            }
        }
        j += 4;
    }
    while j < first + out.len() {
        let b = row(j);
        out[j - first] = match metric {
            Metric::Cosine => {
                let mut dot = 0.0f64;
                for c in 0..dim {
                    dot += a[c] as f64 * b[c] as f64;
                }
                cosine_from(dot, norms[i], norms[j])
            }
            Metric::Euclidean => {
                let mut sq = 0.0f64;
                for c in 0..dim {
                    let d = a[c] as f64 - b[c] as f64;
                    sq += d * d;
                }
                sq.sqrt() as f32
            }
        };
        j += 1;
    }
}

/// Condensed distances between the rows of `reps` listed in `subset`.
///
/// Cosine distance is `1 - u.v / (|u| |v|)`, or `1.0` when either vector is
/// zero. Fails before allocating when the matrix would exceed `memory_budget`
/// bytes.
pub fn pairwise_condensed_distances(
    reps: &EmbeddingMatrix,
    subset: &[usize],
    metric: Metric,
    memory_budget: u64,
) -> Result<CondensedMatrix, ClusterError> {
    let m = subset.len();
    if m == 0 {
        return Err(ClusterError::EmptySubset);
    }
    let required = condensed_bytes(m);
    if required > memory_budget || usize::try_from(condensed_len(m)).is_err() {
        return Err(ClusterError::CapacityExceeded {
            points: m,
            required_bytes: required,
            budget_bytes: memory_budget,
        });
    }
    if let Some(&bad) = subset.iter().find(|&&t| t >= reps.vocab_size()) {
        return Err(ClusterError::TokenOutOfRange {
            token_id: bad,
            vocab_size: reps.vocab_size(),
        });
    }

    let dim = reps.dim();
    let mut points = Vec::with_capacity(m * dim);
    for &t in subset {
        points.extend_from_slice(reps.row(t));
    }
    let norms: Vec<f64> = match metric {
        Metric::Cosine => points
            .chunks_exact(dim)
            .map(|r| r.iter().fold(0.0f64, |acc, &x| acc + x as f64 * x as f64).sqrt())
            .collect(),
        Metric::Euclidean => Vec::new(),
    };

    let mut data = vec![0.0f32; condensed_len(m) as usize];
    let mut rows: Vec<(usize, &mut [f32])> = Vec::with_capacity(m);
    let mut rest = data.as_mut_slice();
    for i in 0..m {
        let (head, tail) = rest.split_at_mut(m - 1 - i);
        rows.push((i, head));
        rest = tail;
    }
    rows.into_par_iter()
        .with_min_len(16)
        .for_each(|(i, out)| fill_row(&points, dim, &norms, metric, i, out));

    Ok(CondensedMatrix { m, data })
}
