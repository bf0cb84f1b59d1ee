//! Agglomerative clustering by the nearest-neighbor chain algorithm.
//!
//! Cluster pairs are compared by the key `(distance, lo, hi)`, where `lo`
//! and `hi` are the smaller and larger of the two clusters' *anchors* and a
//! cluster's anchor is the largest leaf index it contains (a leaf's anchor is
//! its own index). Anchors of disjoint clusters differ, so the key is a
//! strict total order and equal distances are resolved by the
//! lexicographically smallest pair. A merged cluster's anchor is never
//! smaller than either part's, and single, complete and average linkage never
//! produce a distance below the smaller of the two merged distances. The key
//! therefore keeps the reducibility property the chain algorithm relies on,
//! and the merge tree equals the one built by the naive "merge the globally
//! closest pair" loop under the same key, ties included.
//!
//! The chain discovers merges out of global order, so the tree is replayed
//! afterwards: merges are emitted smallest key first among those whose
//! children already exist. That is exactly the naive loop's order; the
//! `k`-cluster cut then undoes the last `k - 1` merges.
//!
//! Single and complete linkage updates are exact (`min`/`max`), so the order
//! in which the chain performs merges does not affect any stored distance.
//! The average-linkage update rounds to `f32`, and the rounded value of a
//! cluster-to-cluster distance depends on the order in which its parts were
//! merged. [`agglomerate`] therefore runs average linkage through a
//! lower-bound priority queue that performs merges in global key order.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use super::distance::condensed_index;
use super::{ClusterError, CondensedMatrix, Linkage};

/// One merge; `a < b` are cluster ids (leaves `0..m`, merged clusters
/// `m, m+1, ...` in merge order) and `id` is the new cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
    pub id: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    leaves: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn leaves(&self) -> usize {
        self.leaves
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }
}

#[derive(Clone, Copy, PartialEq, Debug)]
struct PairKey {
    distance: f32,
    lo: u32,
    hi: u32,
}

impl PairKey {
    fn new(distance: f32, x: u32, y: u32) -> Self {
        PairKey {
            distance,
            lo: x.min(y),
            hi: x.max(y),
        }
    }
}

impl Eq for PairKey {}

impl Ord for PairKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.lo.cmp(&other.lo))
            .then(self.hi.cmp(&other.hi))
    }
}

impl PartialOrd for PairKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
fn update(linkage: Linkage, d_ac: f32, d_bc: f32, size_a: usize, size_b: usize) -> f32 {
    match linkage {
        Linkage::Single => d_ac.min(d_bc),
        Linkage::Complete => d_ac.max(d_bc),
        Linkage::Average => {
            let (na, nb) = (size_a as f64, size_b as f64);
            let mean = (na * d_ac as f64 + nb * d_bc as f64) / (na + nb);
            // Keep the result inside [min, max] under rounding.
            mean.clamp(d_ac.min(d_bc) as f64, d_ac.max(d_bc) as f64) as f32
        }
    }
}

/// Active slots as a doubly linked list in ascending order.
struct ActiveList {
    next: Vec<usize>,
    prev: Vec<usize>,
    head: usize,
}

impl ActiveList {
    const NIL: usize = usize::MAX;

    fn new(m: usize) -> Self {
        ActiveList {
            next: (1..=m).map(|i| if i == m { Self::NIL } else { i }).collect(),
            prev: (0..m).map(|i| if i == 0 { Self::NIL } else { i - 1 }).collect(),
            head: 0,
        }
    }

    fn remove(&mut self, i: usize) {
        let (p, n) = (self.prev[i], self.next[i]);
        if p == Self::NIL {
            self.head = n;
        } else {
            self.next[p] = n;
        }
        if n != Self::NIL {
            self.prev[n] = p;
        }
    }

    /// Active slots above `i`, which must itself be active.
    fn iter_after(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::successors(
            (self.next[i] != Self::NIL).then_some(self.next[i]),
            move |&j| (self.next[j] != Self::NIL).then_some(self.next[j]),
        )
    }

    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::successors(
            (self.head != Self::NIL).then_some(self.head),
            move |&i| (self.next[i] != Self::NIL).then_some(self.next[i]),
        )
    }
}

struct RawMerge {
    children: [usize; 2],
    key: PairKey,
    size: usize,
}

/// Builds the full dendrogram of `m` leaves from their condensed distances.
pub fn nn_chain_agglomerate(d: CondensedMatrix, linkage: Linkage) -> Result<Dendrogram, ClusterError> {
    let (m, mut dist) = d.into_parts();
    if m == 0 {
        return Err(ClusterError::EmptySubset);
    }
    if m == 1 {
        return Ok(Dendrogram { leaves: 1, merges: Vec::new() });
    }
    if m > u32::MAX as usize {
        return Err(ClusterError::TooManyPoints(m));
    }
    let at = |i: usize, j: usize| if i < j { condensed_index(m, i, j) } else { condensed_index(m, j, i) };

    let mut active = ActiveList::new(m);
    let mut anchor: Vec<u32> = (0..m as u32).collect();
    let mut size = vec![1usize; m];
    // Node id held by each slot: leaves, then m + (discovery index).
    let mut node: Vec<usize> = (0..m).collect();
    let mut raw: Vec<RawMerge> = Vec::with_capacity(m - 1);
    let mut chain: Vec<usize> = Vec::with_capacity(m);

    while raw.len() < m - 1 {
        if chain.is_empty() {
            chain.push(active.head);
        }
        let (a, b, key) = loop {
            let top = *chain.last().expect("chain is nonempty");
            let mut best: Option<(PairKey, usize)> = None;
            for c in active.iter() {
                if c == top {
                    continue;
                }
                let key = PairKey::new(dist[at(top, c)], anchor[top], anchor[c]);
                if best.is_none_or(|(k, _)| key < k) {
                    best = Some((key, c));
                }
            }
            let (key, nn) = best.expect("at least two active clusters");
            if chain.len() >= 2 && chain[chain.len() - 2] == nn {
                chain.truncate(chain.len() - 2);
                break (top, nn, key);
            }
            chain.push(nn);
        };

        // The merged cluster lives in the higher slot.
        let (keep, gone) = (a.max(b), a.min(b));
        for c in active.iter() {
            if c == keep || c == gone {
                continue;
            }
            let merged = update(linkage, dist[at(keep, c)], dist[at(gone, c)], size[keep], size[gone]);
            dist[at(keep, c)] = merged;
        }
        active.remove(gone);
        raw.push(RawMerge {
            children: [node[a], node[b]],
            key,
            size: size[a] + size[b],
        });
        anchor[keep] = anchor[a].max(anchor[b]);
        size[keep] += size[gone];
        node[keep] = m + raw.len() - 1;
    }

    Ok(Dendrogram {
        leaves: m,
        merges: replay_in_key_order(m, &raw),
    })
}

/// Builds the full dendrogram, using the nearest-neighbor chain for single
/// and complete linkage and global-order merging for average linkage.
pub fn agglomerate(d: CondensedMatrix, linkage: Linkage) -> Result<Dendrogram, ClusterError> {
    match linkage {
        Linkage::Average => global_order_agglomerate(d, linkage),
        Linkage::Single | Linkage::Complete => nn_chain_agglomerate(d, linkage),
    }
}

/// Min-heap of slots keyed by `PairKey`, with in-place key updates.
struct SlotHeap {
    heap: Vec<usize>,
    pos: Vec<usize>,
    key: Vec<PairKey>,
}

impl SlotHeap {
    const ABSENT: usize = usize::MAX;

    fn new(m: usize) -> Self {
        SlotHeap {
            heap: Vec::with_capacity(m),
            pos: vec![Self::ABSENT; m],
            key: vec![PairKey::new(f32::INFINITY, 0, 0); m],
        }
    }

    fn peek(&self) -> Option<usize> {
        self.heap.first().copied()
    }

    fn swap(&mut self, x: usize, y: usize) {
        self.heap.swap(x, y);
        self.pos[self.heap[x]] = x;
        self.pos[self.heap[y]] = y;
    }

    fn less(&self, x: usize, y: usize) -> bool {
        self.key[self.heap[x]] < self.key[self.heap[y]]
    }

    fn sift_up(&mut self, mut x: usize) {
        while x > 0 {
            let p = (x - 1) / 2;
            if !self.less(x, p) {
                break;
            }
            self.swap(x, p);
            x = p;
        }
    }

    fn sift_down(&mut self, mut x: usize) {
        loop {
            let (l, r) = (2 * x + 1, 2 * x + 2);
            let mut best = x;
            if l < self.heap.len() && self.less(l, best) {
                best = l;
            }
            if r < self.heap.len() && self.less(r, best) {
                best = r;
            }
            if best == x {
                break;
            }
            self.swap(x, best);
            x = best;
        }
    }

    fn set(&mut self, slot: usize, key: PairKey) {
        self.key[slot] = key;
        if self.pos[slot] == Self::ABSENT {
            self.pos[slot] = self.heap.len();
            self.heap.push(slot);
        }
        let x = self.pos[slot];
        self.sift_up(x);
        self.sift_down(self.pos[slot]);
    }

    fn remove(&mut self, slot: usize) {
        let x = self.pos[slot];
        if x == Self::ABSENT {
            return;
        }
        let last = self.heap.len() - 1;
        self.swap(x, last);
        self.heap.pop();
        self.pos[slot] = Self::ABSENT;
        if x < self.heap.len() {
            self.sift_up(x);
            self.sift_down(self.pos[self.heap[x]]);
        }
    }
}

/// Merges in global key order. Each slot `i` keeps a candidate partner
/// among the active slots above it and a lower bound on its smallest key;
/// a popped bound that still matches a live pair is the global minimum.
///
/// Merged clusters keep the higher slot, so a slot index is always the
/// largest leaf of its cluster and keys can be formed from slots directly.
fn global_order_agglomerate(d: CondensedMatrix, linkage: Linkage) -> Result<Dendrogram, ClusterError> {
    let (m, mut dist) = d.into_parts();
    if m == 0 {
        return Err(ClusterError::EmptySubset);
    }
    if m > u32::MAX as usize {
        return Err(ClusterError::TooManyPoints(m));
    }
    let at = |i: usize, j: usize| if i < j { condensed_index(m, i, j) } else { condensed_index(m, j, i) };

    let mut active = ActiveList::new(m);
    let mut live = vec![true; m];
    let mut size = vec![1usize; m];
    let mut node: Vec<usize> = (0..m).collect();
    let mut partner = vec![usize::MAX; m];
    let mut heap = SlotHeap::new(m);

    let rescan = |i: usize, dist: &[f32], active: &ActiveList, partner: &mut [usize], heap: &mut SlotHeap| {
        let mut best: Option<(PairKey, usize)> = None;
        for j in active.iter_after(i) {
            let key = PairKey::new(dist[at(i, j)], i as u32, j as u32);
            if best.is_none_or(|(k, _)| key < k) {
                best = Some((key, j));
            }
        }
        match best {
            Some((key, j)) => {
                partner[i] = j;
                heap.set(i, key);
            }
            None => heap.remove(i),
        }
    };
    for i in 0..m {
        rescan(i, &dist, &active, &mut partner, &mut heap);
    }

    let mut merges = Vec::with_capacity(m.saturating_sub(1));
    while let Some(a) = heap.peek() {
        let b = partner[a];
        let key = heap.key[a];
        if !live[b] || dist[at(a, b)].to_bits() != key.distance.to_bits() {
            rescan(a, &dist, &active, &mut partner, &mut heap);
            continue;
        }
        for c in active.iter() {
            if c == a || c == b {
                continue;
            }
            dist[at(b, c)] = update(linkage, dist[at(b, c)], dist[at(a, c)], size[b], size[a]);
        }
        active.remove(a);
        live[a] = false;
        heap.remove(a);
        let id = m + merges.len();
        merges.push(Merge {
            a: node[a].min(node[b]),
            b: node[a].max(node[b]),
            distance: key.distance as f64,
            id,
            size: size[a] + size[b],
        });
        size[b] += size[a];
        node[b] = id;

        // Only keys involving b can have dropped below a stored bound.
        for i in active.iter().take_while(|&i| i < b) {
            let candidate = PairKey::new(dist[at(i, b)], i as u32, b as u32);
            if heap.pos[i] == SlotHeap::ABSENT || candidate < heap.key[i] {
                partner[i] = b;
                heap.set(i, candidate);
            }
        }
        rescan(b, &dist, &active, &mut partner, &mut heap);
    }

    Ok(Dendrogram { leaves: m, merges })
}

fn replay_in_key_order(m: usize, raw: &[RawMerge]) -> Vec<Merge> {
    let mut parent = vec![usize::MAX; m + raw.len()];
    for (t, r) in raw.iter().enumerate() {
        for &c in &r.children {
            parent[c] = t;
        }
    }
    let mut pending = vec![2u8; raw.len()];
    let mut heap = BinaryHeap::new();
    for (t, r) in raw.iter().enumerate() {
        pending[t] = r.children.iter().filter(|&&c| c >= m).count() as u8;
        if pending[t] == 0 {
            heap.push(Reverse((r.key, t)));
        }
    }
    let mut final_id = vec![0usize; m + raw.len()];
    final_id[..m].iter_mut().enumerate().for_each(|(i, f)| *f = i);
    let mut out = Vec::with_capacity(raw.len());
    while let Some(Reverse((key, t))) = heap.pop() {
        let id = m + out.len();
        final_id[m + t] = id;
        let [x, y] = raw[t].children.map(|c| final_id[c]);
        out.push(Merge {
            a: x.min(y),
            b: x.max(y),
            distance: key.distance as f64,
            id,
            size: raw[t].size,
        });
        let p = parent[m + t];
        if p != usize::MAX {
            pending[p] -= 1;
            if pending[p] == 0 {
                heap.push(Reverse((raw[p].key, p)));
            }
        }
    }
    out
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Flat labels with `k` clusters, numbered by smallest contained leaf.
pub fn cut_to_k(dg: &Dendrogram, k: usize) -> Result<Vec<u32>, ClusterError> {
    let m = dg.leaves;
    if k == 0 || k > m {
        return Err(ClusterError::InvalidK { k, available: m });
    }
    let mut parent: Vec<usize> = (0..m + dg.merges.len()).collect();
    for merge in &dg.merges[..m - k] {
        parent[merge.a] = merge.id;
        parent[merge.b] = merge.id;
    }
    let mut label_of_root = vec![u32::MAX; parent.len()];
    let mut next = 0u32;
    let mut labels = Vec::with_capacity(m);
    for leaf in 0..m {
        let root = find(&mut parent, leaf);
        if label_of_root[root] == u32::MAX {
            label_of_root[root] = next;
            next += 1;
        }
        labels.push(label_of_root[root]);
    }
    Ok(labels)
}
