//! Lloyd's k-means, used as the alternative clustering algorithm.
//!
//! Initialization picks the first center with a SplitMix64 draw and every
//! further center as the point farthest from all chosen ones. Cosine is
//! handled by unit-normalizing rows first; distances are squared Euclidean.

use super::{ClusterError, Metric};
use crate::artifact_io::EmbeddingMatrix;

pub const MAX_ITERATIONS: usize = 100;

/// SplitMix64 (Steele, Lea & Flood).
#[derive(Debug, Clone)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// An independent generator derived from this one.
    pub fn split(&mut self) -> Self {
        SplitMix64(self.next_u64())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

/// Moves the point farthest from its own centroid into each empty cluster,
/// taking only from clusters with more than one member.
fn refill_empty(points: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize], k: usize) {
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for (i, p) in points.iter().enumerate() {
            if counts[labels[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[labels[i]]);
            if best.is_none_or(|(bd, _)| d > bd) {
                best = Some((d, i));
            }
        }
        let (_, i) = best.expect("k <= n leaves a cluster with two or more members");
        counts[labels[i]] -= 1;
        labels[i] = empty;
        counts[empty] = 1;
    }
}

fn recompute(points: &[Vec<f64>], labels: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let mut counts = vec![0usize; centroids.len()];
    centroids.iter_mut().for_each(|c| c.iter_mut().for_each(|x| *x = 0.0));
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for c in 0..dim {
            centroids[l][c] += p[c];
        }
    }
    for (centroid, &n) in centroids.iter_mut().zip(&counts) {
        if n > 0 {
            centroid.iter_mut().for_each(|x| *x /= n as f64);
        }
    }
}

/// Flat labels for the rows in `subset`, numbered by smallest member.
pub fn kmeans_cluster(
    reps: &EmbeddingMatrix,
    subset: &[usize],
    k: usize,
    metric: Metric,
    seed: u64,
) -> Result<Vec<u32>, ClusterError> {
    let n = subset.len();
    if k == 0 || k > n {
        return Err(ClusterError::InvalidK { k, available: n });
    }
    let points: Vec<Vec<f64>> = subset
        .iter()
        .map(|&t| {
            let mut row: Vec<f64> = reps.row(t).iter().map(|&x| x as f64).collect();
            if metric == Metric::Cosine {
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|x| *x /= norm);
                }
            }
            row
        })
        .collect();

    let mut rng = SplitMix64::new(seed);
    let first = (rng.next_u64() % n as u64) as usize;
    let mut chosen = vec![false; n];
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut min_d: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < k {
        let mut best: Option<(f64, usize)> = None;
        for i in (0..n).filter(|&i| !chosen[i]) {
            if best.is_none_or(|(bd, _)| min_d[i] > bd) {
                best = Some((min_d[i], i));
            }
        }
        let (_, pick) = best.expect("k <= n");
        chosen[pick] = true;
        for (i, p) in points.iter().enumerate() {
            min_d[i] = min_d[i].min(sq_dist(p, &points[pick]));
        }
        centroids.push(points[pick].clone());
    }

    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    for _ in 0..MAX_ITERATIONS {
        refill_empty(&points, &centroids, &mut labels, k);
        recompute(&points, &labels, &mut centroids);
        let mut changed = false;
        for (p, l) in points.iter().zip(labels.iter_mut()) {
            let c = nearest(p, &centroids);
            changed |= c != *l;
            *l = c;
        }
        if !changed {
            break;
        }
    }
    refill_empty(&points, &centroids, &mut labels, k);

    let mut renumber = vec![u32::MAX; k];
    let mut next = 0;
    Ok(labels
        .into_iter()
        .map(|l| {
            if renumber[l] == u32::MAX {
                renumber[l] = next;
                next += 1;
            }
            renumber[l]
        })
        .collect())
}
