//! AUROC and prediction rejection ratio of uncertainty scores.
//!
//! The positive class is an incorrect response (`correct == false`): a good
//! uncertainty score ranks incorrect responses above correct ones.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact_io::{LabelSet, ScoreTable};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error("score {index} is NaN")]
    NanScore { index: usize },
    #[error("no scored sample has a label")]
    EmptyIntersection,
}

fn check(scores: &[f64], correct: &[bool]) -> Result<(usize, usize), EvalError> {
    if scores.len() != correct.len() {
        return Err(EvalError::LengthMismatch { scores: scores.len(), labels: correct.len() });
    }
    if scores.len() < 2 {
        return Err(EvalError::Undefined("fewer than two samples"));
    }
    if let Some(index) = scores.iter().position(|s| s.is_nan()) {
        return Err(EvalError::NanScore { index });
    }
    let incorrect = correct.iter().filter(|c| !**c).count();
    match incorrect {
        0 => Err(EvalError::Undefined("all responses correct")),
        n if n == correct.len() => Err(EvalError::Undefined("all responses incorrect")),
        n => Ok((n, correct.len() - n)),
    }
}

/// Indices sorted by score, with the runs of tied scores as `start..end`.
fn tie_groups(scores: &[f64], descending: bool) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let o = scores[a].total_cmp(&scores[b]);
        if descending { o.reverse() } else { o }
    });
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=order.len() {
        if i == order.len() || scores[order[i]].total_cmp(&scores[order[start]]) != Ordering::Equal {
            groups.push((start, i));
            start = i;
        }
    }
    (order, groups)
}

/// Rank-statistic AUROC with average ranks for ties.
///
/// Ranks are kept doubled so the whole computation is integer until the
/// final division.
pub fn auroc(scores: &[f64], correct: &[bool]) -> Result<f64, EvalError> {
    let (n_pos, n_neg) = check(scores, correct)?;
    let (order, groups) = tie_groups(scores, false);
    let mut doubled_rank_sum: u128 = 0;
    for (start, end) in groups {
        // Ranks start..end are 1-based (start+1)..=end; twice their mean.
        let doubled_avg = (start + 1 + end) as u128;
        let positives = order[start..end].iter().filter(|&&i| !correct[i]).count() as u128;
        doubled_rank_sum += doubled_avg * positives;
    }
    let n_pos = n_pos as u128;
    let doubled_u = doubled_rank_sum - n_pos * (n_pos + 1);
    Ok(doubled_u as f64 / (2 * n_pos * n_neg as u128) as f64)
}

/// Area under the rejection curve: mean over `r = 0..n` of the error rate
/// among samples kept after rejecting the `r` highest scores. Within a tie
/// group the rejected part is taken in expectation over orderings.
fn rejection_area(scores: &[f64], correct: &[bool]) -> f64 {
    let n = scores.len();
    let total_errors = correct.iter().filter(|c| !**c).count() as f64;
    let (order, groups) = tie_groups(scores, true);
    let mut area = 0.0;
    let mut errors_before = 0.0;
    for (start, end) in groups {
        let size = (end - start) as f64;
        let group_errors = order[start..end].iter().filter(|&&i| !correct[i]).count() as f64;
        for t in 0..end - start {
            let r = start + t;
            let removed = errors_before + t as f64 * group_errors / size;
            area += (total_errors - removed) / (n - r) as f64;
        }
        errors_before += group_errors;
    }
    area / n as f64
}

/// Prediction rejection ratio: `(A_rnd - A_unc) / (A_rnd - A_oracle)`.
///
/// The random and oracle areas go through the same routine as the score
/// area (all scores tied, and scores equal to `1 - C`), so oracle scores
/// give exactly 1 and constant scores exactly 0.
pub fn prr(scores: &[f64], correct: &[bool]) -> Result<f64, EvalError> {
    check(scores, correct)?;
    let unc = rejection_area(scores, correct);
    let rnd = rejection_area(&vec![0.0; scores.len()], correct);
    let oracle_scores: Vec<f64> = correct.iter().map(|&c| if c { 0.0 } else { 1.0 }).collect();
    let oracle = rejection_area(&oracle_scores, correct);
    Ok((rnd - unc) / (rnd - oracle))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub auroc: Option<f64>,
    pub prr: Option<f64>,
    pub n_samples: usize,
    pub n_incorrect: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fingerprint of the run that produced the scores, when known.
    pub config_fingerprint: Option<String>,
    /// Scored sample ids without a label; they are left out of the metrics.
    pub missing_labels: usize,
    pub methods: Vec<MethodMetrics>,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Per-method metrics over the scored samples that have labels.
pub fn evaluate(table: &ScoreTable, labels: &LabelSet) -> Result<EvalReport, EvalError> {
    let mut per_method: BTreeMap<&str, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    let mut missing = std::collections::BTreeSet::new();
    for row in table.rows() {
        match labels.get(&row.sample_id) {
            Some(c) => {
                let (s, l) = per_method.entry(&row.method).or_default();
                s.push(row.score);
                l.push(c);
            }
            None => {
                missing.insert(row.sample_id.as_str());
            }
        }
    }
    if per_method.is_empty() {
        return Err(EvalError::EmptyIntersection);
    }
    let methods = per_method
        .into_iter()
        .map(|(method, (scores, correct))| {
            let n_incorrect = correct.iter().filter(|c| !**c).count();
            let metrics = auroc(&scores, &correct).and_then(|a| Ok((a, prr(&scores, &correct)?)));
            let (auroc, prr, reason) = match metrics {
                Ok((a, p)) => (Some(a), Some(p), None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            MethodMetrics {
                method: method.to_string(),
                auroc,
                prr,
                n_samples: scores.len(),
                n_incorrect,
                reason,
            }
        })
        .collect();
    Ok(EvalReport {
        config_fingerprint: None,
        missing_labels: missing.len(),
        methods,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifact_io::ScoreRow;

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.1], &b(&[0, 1])).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 5], &b(&[0, 1, 1, 0, 1])).unwrap(), 0.5);
        assert_eq!(auroc(&[0.2, 0.4, 0.6, 0.8], &b(&[1, 0, 1, 0])).unwrap(), 0.75);
    }

    #[test]
    fn auroc_errors() {
        assert!(matches!(auroc(&[0.1, 0.2], &b(&[1, 1])), Err(EvalError::Undefined(_))));
        assert!(matches!(auroc(&[0.1], &b(&[1])), Err(EvalError::Undefined(_))));
        assert!(matches!(auroc(&[0.1, 0.2], &b(&[1])), Err(EvalError::LengthMismatch { .. })));
        assert_eq!(auroc(&[f64::NAN, 0.2], &b(&[0, 1])), Err(EvalError::NanScore { index: 0 }));
        assert_eq!(auroc(&[f64::INFINITY, 0.2], &b(&[0, 1])).unwrap(), 1.0);
    }

    #[test]
    fn prr_examples() {
        let c = b(&[1, 0, 1, 0, 0, 1, 1]);
        let oracle: Vec<f64> = c.iter().map(|&x| if x { 0.0 } else { 1.0 }).collect();
        assert_eq!(prr(&oracle, &c).unwrap(), 1.0);
        assert_eq!(prr(&[0.4; 7], &c).unwrap(), 0.0);
        let anti = [1.0, 0.0, 1.0, 0.0];
        assert!((prr(&anti, &b(&[1, 0, 1, 0])).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(prr(&[0.1, 0.2], &b(&[0, 0])), Err(EvalError::Undefined(_))));
    }

    #[test]
    fn rejection_area_without_ties() {
        // Rejecting 0..3 of [e, c, e, c] in score order keeps error rates
        // 2/4, 1/3, 1/2, 0/1.
        let area = rejection_area(&[0.9, 0.8, 0.7, 0.6], &b(&[0, 1, 0, 1]));
        let want = (0.5 + 1.0 / 3.0 + 0.5 + 0.0) / 4.0;
        assert!((area - want).abs() < 1e-15);
    }

    fn row(id: &str, method: &str, score: f64) -> ScoreRow {
        ScoreRow { sample_id: id.into(), method: method.into(), score }
    }

    #[test]
    fn evaluate_examples() {
        let labels: LabelSet =
            [("a", true), ("b", false), ("c", true), ("d", false)].map(|(k, v)| (k.to_string(), v)).into_iter().collect();
        let mut rows = Vec::new();
        for (id, s) in [("a", 0.1), ("b", 0.9), ("c", 0.2), ("d", 0.8), ("e", 0.5)] {
            rows.push(row(id, "stc", s));
            rows.push(row(id, "probability", 1.0 - s));
        }
        let report = evaluate(&ScoreTable::new(rows).unwrap(), &labels).unwrap();
        assert_eq!(report.methods.len(), 2);
        assert_eq!(report.missing_labels, 1);
        let stc = report.method("stc").unwrap();
        assert_eq!((stc.auroc, stc.prr, stc.n_samples, stc.n_incorrect), (Some(1.0), Some(1.0), 4, 2));
        assert_eq!(report.method("probability").unwrap().auroc, Some(0.0));
    }

    #[test]
    fn evaluate_degenerate_and_empty() {
        let labels: LabelSet = [("a".to_string(), true), ("b".to_string(), true)].into_iter().collect();
        let table = ScoreTable::new(vec![row("a", "stc", 0.1), row("b", "stc", 0.2)]).unwrap();
        let report = evaluate(&table, &labels).unwrap();
        let m = &report.methods[0];
        assert_eq!((m.auroc, m.prr), (None, None));
        assert!(m.reason.as_deref().unwrap().contains("all responses correct"));
        assert!(report.to_json().contains("\"auroc\": null"));

        let table = ScoreTable::new(vec![row("z", "stc", 0.1)]).unwrap();
        assert_eq!(evaluate(&table, &labels), Err(EvalError::EmptyIntersection));
    }
}
