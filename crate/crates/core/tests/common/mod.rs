//! Reference implementations and random generators shared by the
//! integration tests. The oracles are written directly from the definitions
//! and share no code with the library beyond plain data types.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use stc::artifact_io::StopwordSet;
use stc::cluster::{ClusterConfig, Linkage, Metric};
use stc::{ClusterAssignment, DecodeStep, GenerationTrace, VocabTable};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Clustering

pub fn oracle_distance(a: &[f32], b: &[f32], metric: Metric) -> f32 {
    match metric {
        Metric::Euclidean => {
            let mut sq = 0.0f64;
            for (x, y) in a.iter().zip(b) {
                let d = *x as f64 - *y as f64;
                sq += d * d;
            }
            sq.sqrt() as f32
        }
        Metric::Cosine => {
            let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
            for (x, y) in a.iter().zip(b) {
                dot += *x as f64 * *y as f64;
                na += *x as f64 * *x as f64;
                nb += *y as f64 * *y as f64;
            }
            let (na, nb) = (na.sqrt(), nb.sqrt());
            if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                (1.0 - dot / (na * nb)).clamp(0.0, 2.0) as f32
            }
        }
    }
}

fn oracle_update(linkage: Linkage, d1: f32, d2: f32, n1: usize, n2: usize) -> f32 {
    match linkage {
        Linkage::Single => d1.min(d2),
        Linkage::Complete => d1.max(d2),
        Linkage::Average => {
            let v = (n1 as f64 * d1 as f64 + n2 as f64 * d2 as f64) / (n1 + n2) as f64;
            v.clamp(d1.min(d2) as f64, d1.max(d2) as f64) as f32
        }
    }
}

/// Cubic agglomerative clustering: repeatedly merges the pair with the
/// smallest `(distance, smaller anchor, larger anchor)`, where a cluster's
/// anchor is its largest member. Returns labels numbered by smallest member
/// and the merge distances in merge order.
pub fn naive_agglomerative(points: &[Vec<f32>], metric: Metric, linkage: Linkage, k: usize) -> (Vec<u32>, Vec<f32>) {
    let m = points.len();
    let mut d = vec![vec![0.0f32; m]; m];
    for i in 0..m {
        for j in 0..m {
            if i != j {
                d[i][j] = oracle_distance(&points[i], &points[j], metric);
            }
        }
    }
    let mut members: Vec<Option<Vec<usize>>> = (0..m).map(|i| Some(vec![i])).collect();
    let mut heights = Vec::new();
    let mut alive = m;
    while alive > 1 {
        let mut best: Option<(f32, usize, usize, usize, usize)> = None;
        for i in 0..m {
            let Some(mi) = &members[i] else { continue };
            for j in i + 1..m {
                let Some(mj) = &members[j] else { continue };
                let (ai, aj) = (*mi.iter().max().unwrap(), *mj.iter().max().unwrap());
                let key = (d[i][j], ai.min(aj), ai.max(aj), i, j);
                let better = match best {
                    None => true,
                    Some(b) => (key.0, key.1, key.2) < (b.0, b.1, b.2),
                };
                if better {
                    best = Some(key);
                }
            }
        }
        let (h, _, _, i, j) = best.unwrap();
        if alive == k {
            break;
        }
        heights.push(h);
        let (ni, nj) = (members[i].as_ref().unwrap().len(), members[j].as_ref().unwrap().len());
        for c in 0..m {
            if c == i || c == j || members[c].is_none() {
                continue;
            }
            let v = oracle_update(linkage, d[i][c], d[j][c], ni, nj);
            d[i][c] = v;
            d[c][i] = v;
        }
        let mj = members[j].take().unwrap();
        members[i].as_mut().unwrap().extend(mj);
        alive -= 1;
    }
    let mut clusters: Vec<Vec<usize>> = members.into_iter().flatten().collect();
    clusters.iter_mut().for_each(|c| c.sort());
    clusters.sort();
    let mut labels = vec![0u32; m];
    for (label, c) in clusters.iter().enumerate() {
        for &p in c {
            labels[p] = label as u32;
        }
    }
    (labels, heights)
}

/// Relabels a partition so that clusters are numbered by first appearance.
pub fn canonical(labels: &[u32]) -> Vec<u32> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len() as u32;
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Random points; `grid` draws small integers so that many distances tie.
pub fn random_points(r: &mut impl Rng, m: usize, dim: usize, grid: bool) -> Vec<Vec<f32>> {
    (0..m)
        .map(|_| {
            (0..dim)
                .map(|_| if grid { r.gen_range(-2i32..=2) as f32 } else { r.gen_range(-1.0f32..1.0) })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Scoring

/// Token surfaces used by random vocabularies: plain, spaced, marked with
/// the byte-level or sentencepiece space markers, mixed case, numerals and
/// whitespace-only tokens.
pub const SURFACES: &[&str] = &[
    "a", "ab", "abc", "b", "ba", "A", "Ab", " a", "Ġa", "▁ab", "Ġ", " ", "1", "12", "c", "Cab", "bc", "ĠB",
    "▁", "ca",
];

pub fn random_vocab(r: &mut impl Rng, v: usize) -> VocabTable {
    let raw: Vec<&str> = (0..v).map(|_| SURFACES[r.gen_range(0..SURFACES.len())]).collect();
    VocabTable::from_raw_tokens(raw, &StopwordSet::default())
}

/// Random partition of `0..v` with some tokens excluded; at least one token
/// is clustered.
pub fn random_assignment(r: &mut impl Rng, v: usize) -> ClusterAssignment {
    let k = r.gen_range(1..=v);
    let mut labels: Vec<Option<u32>> = (0..v)
        .map(|_| if r.gen_bool(0.2) { None } else { Some(r.gen_range(0..k as u32)) })
        .collect();
    // Compact the used labels to 0..k'.
    let mut used: Vec<u32> = labels.iter().flatten().copied().collect();
    used.sort();
    used.dedup();
    if used.is_empty() {
        labels[0] = Some(0);
        used.push(0);
    }
    for l in labels.iter_mut().flatten() {
        *l = used.binary_search(l).unwrap() as u32;
    }
    ClusterAssignment::new(labels, used.len(), &ClusterConfig::default(), Default::default()).unwrap()
}

/// Dense trace: every step carries a probability for every token.
pub fn random_dense_trace(r: &mut impl Rng, v: usize, n: usize, id: &str) -> GenerationTrace {
    let steps = (0..n)
        .map(|i| {
            let mut w: Vec<f64> =
                (0..v).map(|_| if r.gen_bool(0.15) { 0.0 } else { r.gen_range(0.0..1.0f64).powi(3) }).collect();
            let y = r.gen_range(0..v);
            if r.gen_bool(0.05) {
                w[y] = 0.0;
            } else if w[y] == 0.0 {
                w[y] = 0.5;
            }
            let total: f64 = w.iter().sum();
            let total = if total == 0.0 { 1.0 } else { total };
            DecodeStep {
                position: i as u32 + 1,
                generated_token_id: y as u32,
                dist: w.iter().enumerate().map(|(t, p)| (t as u32, p / total)).collect(),
            }
        })
        .collect();
    GenerationTrace { sample_id: id.to_string(), prompt: None, steps }
}

fn oracle_key(s: &str) -> String {
    s.replace(['Ġ', '▁'], " ")
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect::<String>()
        .to_lowercase()
}

pub fn dense_prob(step: &DecodeStep, t: u32) -> f64 {
    step.dist.iter().find(|(id, _)| *id == t).map_or(0.0, |(_, p)| *p)
}

/// Per-step clustered mass, written from the set definitions: cluster
/// members of `y_i` (or `y_i` alone when excluded), tokens whose key
/// prefixes the remaining response, and `y_i` itself.
pub fn oracle_step_masses(
    trace: &GenerationTrace,
    vocab: &VocabTable,
    labels: &[Option<u32>],
    clusters: bool,
    prefix: bool,
) -> Vec<f64> {
    let v = labels.len() as u32;
    let surface = |t: u32| vocab.records()[t as usize].surface.as_str();
    (0..trace.steps.len())
        .map(|i| {
            let step = &trace.steps[i];
            let y = step.generated_token_id;
            let rest: String = trace.steps[i..].iter().map(|s| surface(s.generated_token_id)).collect();
            let rest = oracle_key(&rest);
            let mut mass = 0.0;
            for t in 0..v {
                let in_cluster = clusters
                    && match labels[y as usize] {
                        Some(c) => labels[t as usize] == Some(c),
                        None => t == y,
                    };
                let key = oracle_key(surface(t));
                let in_prefix = prefix && !key.is_empty() && rest.starts_with(&key);
                if t == y || in_cluster || in_prefix {
                    mass += dense_prob(step, t);
                }
            }
            mass.min(1.0)
        })
        .collect()
}

pub fn oracle_stc(trace: &GenerationTrace, vocab: &VocabTable, labels: &[Option<u32>], clusters: bool, prefix: bool) -> f64 {
    1.0 - oracle_step_masses(trace, vocab, labels, clusters, prefix).iter().product::<f64>()
}

pub fn oracle_probability(trace: &GenerationTrace) -> f64 {
    1.0 - trace.steps.iter().map(|s| dense_prob(s, s.generated_token_id)).product::<f64>()
}

// ---------------------------------------------------------------------------
// Evaluation

/// Fraction of (incorrect, correct) pairs ordered correctly, ties counted
/// as one half.
pub fn pair_count_auroc(scores: &[f64], correct: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if !correct[i] && correct[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// PRR from the discrete definition with a stable descending sort; equals
/// the library's value whenever scores are distinct.
pub fn direct_prr(scores: &[f64], correct: &[bool]) -> f64 {
    let n = scores.len();
    let area = |s: &[f64]| {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap());
        let mut total = 0.0;
        for r in 0..n {
            let kept = &order[r..];
            total += kept.iter().filter(|&&i| !correct[i]).count() as f64 / kept.len() as f64;
        }
        total / n as f64
    };
    let unc = area(scores);
    let oracle = area(&correct.iter().map(|&c| if c { 0.0 } else { 1.0 }).collect::<Vec<_>>());
    let rnd = correct.iter().filter(|c| !**c).count() as f64 / n as f64;
    (rnd - unc) / (rnd - oracle)
}

/// Labels with both classes present.
pub fn random_labels(r: &mut impl Rng, n: usize) -> Vec<bool> {
    loop {
        let l: Vec<bool> = (0..n).map(|_| r.gen_bool(0.5)).collect();
        if l.iter().any(|x| *x) && l.iter().any(|x| !*x) {
            return l;
        }
    }
}

// ---------------------------------------------------------------------------
// Fixtures

use std::collections::BTreeMap;
use std::path::Path;

use stc::artifact_io::{save_embedding_matrix, save_vocab, write_traces};
use stc::EmbeddingMatrix;

/// Three-letter lowercase code for `g`, so that keys of a fixed length never
/// prefix one another.
fn code(g: usize) -> String {
    let l = |x: usize| (b'a' + (x % 26) as u8) as char;
    [l(g / 676), l(g / 26), l(g)].iter().collect()
}

fn unit(r: &mut impl Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| r.gen_range(-1.0f32..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if n > 0.1 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Embeddings with `groups` planted groups of `per_group` rows each; rows
/// are noisy copies of a random unit center.
pub fn planted_embeddings(r: &mut impl Rng, groups: usize, per_group: usize, dim: usize, noise: f32) -> EmbeddingMatrix {
    let mut rows = Vec::with_capacity(groups * per_group);
    for _ in 0..groups {
        let c = unit(r, dim);
        for _ in 0..per_group {
            rows.push(c.iter().map(|x| x + r.gen_range(-noise..noise)).collect::<Vec<f32>>());
        }
    }
    EmbeddingMatrix::from_rows(&rows).unwrap()
}

/// Sparse step from a token → weight map; weights are scaled to sum to
/// `total`.
fn sparse_step(position: u32, y: u32, weights: BTreeMap<u32, f64>, total: f64) -> DecodeStep {
    let sum: f64 = weights.values().sum();
    DecodeStep {
        position,
        generated_token_id: y,
        dist: weights.into_iter().map(|(t, w)| (t, w / sum * total)).collect(),
    }
}

pub struct SynonymBench {
    pub vocab: VocabTable,
    pub input: EmbeddingMatrix,
    pub output: EmbeddingMatrix,
    pub groups: usize,
    pub traces: Vec<GenerationTrace>,
    pub correct: Vec<bool>,
}

/// Vocabulary of `groups * per_group` tokens in planted synonym groups and
/// simulated answers. A correct answer's distribution puts most mass on the
/// answer's group and splits it among the synonyms; an incorrect answer's
/// mass is spread over several groups.
pub fn synonym_benchmark(seed: u64, groups: usize, per_group: usize, samples: usize) -> SynonymBench {
    let mut r = rng(seed);
    let v = groups * per_group;
    let raw: Vec<String> = (0..v)
        .map(|t| format!("Ġ{}{}", code(t / per_group), (b'a' + (t % per_group) as u8) as char))
        .collect();
    let vocab = VocabTable::from_raw_tokens(raw, &StopwordSet::default());
    let input = planted_embeddings(&mut r, groups, per_group, 16, 0.08);
    // Output embeddings share the grouping with different noise.
    let output = planted_embeddings(&mut rng(seed ^ 0x5eed), groups, per_group, 16, 0.08);

    let member = |g: usize, j: usize| (g * per_group + j) as u32;
    let mut traces = Vec::with_capacity(samples);
    let mut correct = Vec::with_capacity(samples);
    for s in 0..samples {
        let ok = r.gen_bool(0.5);
        let n = r.gen_range(1..=3);
        let mut steps = Vec::with_capacity(n);
        for i in 0..n {
            let g = r.gen_range(0..groups);
            let y = member(g, r.gen_range(0..per_group));
            let mut w: BTreeMap<u32, f64> = BTreeMap::new();
            let group_mass = if ok { r.gen_range(0.6..0.95) } else { r.gen_range(0.15..0.5) };
            let shares: Vec<f64> = (0..per_group).map(|_| r.gen_range(0.05f64..1.0).powi(2)).collect();
            let share_sum: f64 = shares.iter().sum();
            for (j, sh) in shares.iter().enumerate() {
                *w.entry(member(g, j)).or_default() += group_mass * sh / share_sum;
            }
            // Remaining mass over other groups: a few for correct answers'
            // noise, several competing groups for incorrect ones.
            let others = if ok { 2 } else { r.gen_range(3..=5) };
            let rest = 1.0 - group_mass;
            for _ in 0..others {
                let h = (g + r.gen_range(1..groups)) % groups;
                for j in 0..per_group {
                    *w.entry(member(h, j)).or_default() += rest / (others * per_group) as f64;
                }
            }
            let total = 1.0 - r.gen_range(0.0..0.02);
            steps.push(sparse_step(i as u32 + 1, y, w, total));
        }
        traces.push(GenerationTrace { sample_id: format!("q{s:05}"), prompt: None, steps });
        correct.push(ok);
    }
    SynonymBench { vocab, input, output, groups, traces, correct }
}

/// Writes a small corpus for the command-line tests: `e_in.stce`,
/// `e_out.stce`, `vocab.jsonl`, `stopwords.txt`, `traces.jsonl` and
/// `labels.csv`. The vocabulary has 30 groups of 5 words plus stopwords,
/// numerals and a whitespace token; two traces are deliberately broken.
pub fn write_cli_fixture(dir: &Path, seed: u64) {
    let mut r = rng(seed);
    let (groups, per_group) = (30, 5);
    let mut raw: Vec<String> = (0..groups * per_group)
        .map(|t| format!("Ġ{}{}", code(t / per_group), (b'a' + (t % per_group) as u8) as char))
        .collect();
    raw.extend(["Ġthe", "Ġof", "ĠThe", "Ġ42", "7", "Ġ", "▁and"].map(String::from));
    let v = raw.len();
    let mut input = planted_embeddings(&mut r, groups, per_group, 8, 0.05).as_slice().to_vec();
    let mut output = planted_embeddings(&mut r, groups, per_group, 8, 0.05).as_slice().to_vec();
    for _ in groups * per_group..v {
        input.extend(unit(&mut r, 8));
        output.extend(unit(&mut r, 8));
    }
    save_embedding_matrix(&EmbeddingMatrix::new(v, 8, input).unwrap(), dir.join("e_in.stce")).unwrap();
    save_embedding_matrix(&EmbeddingMatrix::new(v, 8, output).unwrap(), dir.join("e_out.stce")).unwrap();
    save_vocab(&VocabTable::from_raw_tokens(&raw, &StopwordSet::default()), dir.join("vocab.jsonl")).unwrap();
    std::fs::write(dir.join("stopwords.txt"), "the\nof\nand\n").unwrap();

    let mut traces = Vec::new();
    let mut labels = String::from("sample_id,label\n");
    for s in 0..80 {
        let n = r.gen_range(1..=4);
        let steps = (0..n)
            .map(|i| {
                let y = r.gen_range(0..v as u32);
                let mut w = BTreeMap::new();
                w.insert(y, r.gen_range(0.05..1.0));
                for _ in 0..r.gen_range(0..12) {
                    w.insert(r.gen_range(0..v as u32), r.gen_range(0.0..1.0));
                }
                sparse_step(i + 1, y, w, r.gen_range(0.5..1.0))
            })
            .collect();
        let id = format!("s{s:03}");
        if s % 10 != 3 {
            labels.push_str(&format!("{id},{}\n", r.gen_range(0..2)));
        }
        traces.push(GenerationTrace { sample_id: id, prompt: Some(format!("prompt {s}")), steps });
    }
    write_traces(&traces, dir.join("traces.jsonl")).unwrap();
    std::fs::write(dir.join("labels.csv"), labels).unwrap();
}

/// Appends a line that fails to parse and a trace with an unknown token.
pub fn break_traces(dir: &Path) {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new().append(true).open(dir.join("traces.jsonl")).unwrap();
    writeln!(f, "{{\"sample_id\": \"broken\", \"steps\": [").unwrap();
    writeln!(
        f,
        "{{\"sample_id\":\"unknown-token\",\"steps\":[{{\"position\":1,\"generated_token_id\":99999,\"dist\":[[99999,0.5]]}}]}}"
    )
    .unwrap();
}
