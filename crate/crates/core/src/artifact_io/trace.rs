//! `traces.jsonl`: one greedy-decode trace per line.
//!
//! ```json
//! {"sample_id":"q1","prompt":"...","steps":[
//!   {"position":1,"generated_token_id":7,"dist":[[3,0.01],[7,0.92]]}]}
//! ```
//!
//! `dist` is sparse and sorted by token id; absent tokens have probability 0.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{open, ArtifactError, Locus};

/// Slack allowed on a step's total probability for serialization rounding.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeStep {
    pub position: u32,
    pub generated_token_id: u32,
    pub dist: Vec<(u32, f64)>,
}

impl DecodeStep {
    /// Recorded probability of `token_id`, 0 when absent.
    pub fn prob(&self, token_id: u32) -> f64 {
        self.dist
            .binary_search_by_key(&token_id, |&(t, _)| t)
            .map_or(0.0, |i| self.dist[i].1)
    }

    pub fn generated_prob(&self) -> f64 {
        self.prob(self.generated_token_id)
    }

    fn validate(&self) -> Result<(), String> {
        let mut sum = 0.0;
        let mut prev: Option<u32> = None;
        let mut has_generated = false;
        for &(t, p) in &self.dist {
            if let Some(prev) = prev {
                if t == prev {
                    return Err(format!("step {}: duplicate token_id {t}", self.position));
                }
                if t < prev {
                    return Err(format!(
                        "step {}: dist not sorted by token_id ({t} after {prev})",
                        self.position
                    ));
                }
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(format!(
                    "step {}: probability {p} of token {t} outside [0, 1]",
                    self.position
                ));
            }
            has_generated |= t == self.generated_token_id;
            sum += p;
            prev = Some(t);
        }
        if !has_generated {
            return Err(format!(
                "step {}: generated token {} absent from its distribution",
                self.position, self.generated_token_id
            ));
        }
        if sum > 1.0 + PROB_SUM_TOLERANCE {
            return Err(format!(
                "step {}: probabilities sum to {sum}, above 1 + {PROB_SUM_TOLERANCE}",
                self.position
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub sample_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub steps: Vec<DecodeStep>,
}

impl GenerationTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn generated_tokens(&self) -> impl Iterator<Item = u32> + '_ {
        self.steps.iter().map(|s| s.generated_token_id)
    }

    /// Checks step numbering and every per-step distribution invariant.
    pub fn validate(&self) -> Result<(), ArtifactError> {
        for (idx, step) in self.steps.iter().enumerate() {
            if step.position as usize != idx + 1 {
                return Err(ArtifactError::Invalid(format!(
                    "sample {}: step {} has position {}",
                    self.sample_id,
                    idx + 1,
                    step.position
                )));
            }
            step.validate()
                .map_err(|m| ArtifactError::Invalid(format!("sample {}: {m}", self.sample_id)))?;
        }
        Ok(())
    }
}

/// Lazily parses a trace file, holding one line in memory at a time.
pub struct TraceStream<R> {
    path: PathBuf,
    lines: Lines<R>,
    line_no: usize,
}

impl<R: BufRead> TraceStream<R> {
    pub fn new(reader: R, path: impl Into<PathBuf>) -> Self {
        TraceStream {
            path: path.into(),
            lines: reader.lines(),
            line_no: 0,
        }
    }

    /// Line number of the most recently yielded item.
    pub fn line_no(&self) -> usize {
        self.line_no
    }
}

impl<R: BufRead> Iterator for TraceStream<R> {
    type Item = Result<GenerationTrace, ArtifactError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(ArtifactError::io(&self.path, e))),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let locus = Locus::Line(self.line_no);
            let parsed = serde_json::from_str::<GenerationTrace>(&line)
                .map_err(|e| ArtifactError::format(&self.path, locus, format!("malformed trace: {e}")))
                .and_then(|t| match t.validate() {
                    Ok(()) => Ok(t),
                    Err(ArtifactError::Invalid(m)) => Err(ArtifactError::format(&self.path, locus, m)),
                    Err(e) => Err(e),
                });
            return Some(parsed);
        }
    }
}

pub fn stream_traces(
    path: impl AsRef<Path>,
) -> Result<TraceStream<BufReader<File>>, ArtifactError> {
    let path = path.as_ref();
    Ok(TraceStream::new(open(path)?, path))
}

pub fn write_traces<'a, I>(traces: I, path: impl AsRef<Path>) -> Result<(), ArtifactError>
where
    I: IntoIterator<Item = &'a GenerationTrace>,
{
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| ArtifactError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in traces {
        let line = serde_json::to_string(t).map_err(|e| ArtifactError::Invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| ArtifactError::io(path, e))?;
    }
    w.flush().map_err(|e| ArtifactError::io(path, e))
}
