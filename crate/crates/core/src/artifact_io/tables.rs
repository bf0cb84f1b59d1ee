//! `labels.csv` and `scores.csv`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{ArtifactError, Locus};

/// sample_id → correctness (`true` = factually correct, C = 1).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSet(BTreeMap<String, bool>);

impl LabelSet {
    pub fn get(&self, sample_id: &str) -> Option<bool> {
        self.0.get(sample_id).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, bool)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl FromIterator<(String, bool)> for LabelSet {
    fn from_iter<I: IntoIterator<Item = (String, bool)>>(iter: I) -> Self {
        LabelSet(iter.into_iter().collect())
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>, ArtifactError> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> ArtifactError {
    let locus = e
        .position()
        .map_or(Locus::File, |p| Locus::Line(p.line() as usize));
    match e.into_kind() {
        csv::ErrorKind::Io(io) => ArtifactError::io(path, io),
        kind => ArtifactError::format(path, locus, format!("{kind:?}")),
    }
}

fn check_header(
    path: &Path,
    reader: &mut csv::Reader<File>,
    expected: &[&str],
) -> Result<(), ArtifactError> {
    let header = reader.headers().map_err(|e| csv_error(path, e))?;
    if header.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(ArtifactError::format(
            path,
            Locus::Line(1),
            format!("expected header {:?}, got {:?}", expected.join(","), header),
        ));
    }
    Ok(())
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelSet, ArtifactError> {
    let path = path.as_ref();
    let mut reader = csv_reader(path)?;
    check_header(path, &mut reader, &["sample_id", "label"])?;
    let mut out = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |m: String| ArtifactError::format(path, Locus::Line(line), m);
        let id = rec.get(0).unwrap_or_default().to_string();
        let correct = match rec.get(1).map(str::trim) {
            Some("1") => true,
            Some("0") => false,
            other => return Err(bad(format!("label must be 0 or 1, got {other:?}"))),
        };
        if out.insert(id.clone(), correct).is_some() {
            return Err(bad(format!("duplicate sample_id {id:?}")));
        }
    }
    Ok(LabelSet(out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub sample_id: String,
    pub method: String,
    pub score: f64,
}

/// Scores keyed by (sample_id, method), kept sorted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    rows: Vec<ScoreRow>,
}

impl ScoreTable {
    /// Sorts rows by (sample_id, method) and rejects duplicate keys.
    pub fn new(mut rows: Vec<ScoreRow>) -> Result<Self, ArtifactError> {
        rows.sort_by(|a, b| (&a.sample_id, &a.method).cmp(&(&b.sample_id, &b.method)));
        if let Some(w) = rows
            .windows(2)
            .find(|w| w[0].sample_id == w[1].sample_id && w[0].method == w[1].method)
        {
            return Err(ArtifactError::Invalid(format!(
                "duplicate score for ({}, {})",
                w[0].sample_id, w[0].method
            )));
        }
        Ok(ScoreTable { rows })
    }

    pub fn rows(&self) -> &[ScoreRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn methods(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.method.as_str()).collect()
    }
}

pub fn write_scores(table: &ScoreTable, path: impl AsRef<Path>) -> Result<(), ArtifactError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| ArtifactError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let io = |e: csv::Error| csv_error(path, e);
    w.write_record(["sample_id", "method", "score"]).map_err(io)?;
    for r in &table.rows {
        w.write_record([r.sample_id.as_str(), r.method.as_str(), &r.score.to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| ArtifactError::io(path, e))?;
    let mut inner = w.into_inner().map_err(|e| ArtifactError::io(path, e.into_error()))?;
    inner.flush().map_err(|e| ArtifactError::io(path, e))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreTable, ArtifactError> {
    let path = path.as_ref();
    let mut reader = csv_reader(path)?;
    check_header(path, &mut reader, &["sample_id", "method", "score"])?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let score: f64 = field(2).trim().parse().map_err(|_| {
            ArtifactError::format(path, Locus::Line(line), format!("bad score {:?}", field(2)))
        })?;
        if score.is_nan() {
            return Err(ArtifactError::format(path, Locus::Line(line), "score is NaN"));
        }
        rows.push(ScoreRow {
            sample_id: field(0).to_string(),
            method: field(1).to_string(),
            score,
        });
    }
    ScoreTable::new(rows).map_err(|e| match e {
        ArtifactError::Invalid(m) => ArtifactError::format(path, Locus::File, m),
        e => e,
    })
}
