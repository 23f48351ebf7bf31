//! Sibling Detector: label a query by majority vote of the training
//! embeddings nearest to it, and mine near-duplicate pairs whose labels
//! disagree.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Execution};
use crate::sc2v::SizeClass;

#[derive(Debug, Error)]
pub enum SiblingError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index is empty")]
    EmptyIndex,
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("malformed index line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Euclidean distance, accumulated in f64.
pub fn euclidean(q: &[f32], p: &[f32]) -> Result<f64, SiblingError> {
    if q.len() != p.len() {
        return Err(SiblingError::DimensionMismatch { expected: p.len(), got: q.len() });
    }
    Ok(q.iter().zip(p).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>().sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub label: u8,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexHeader {
    pub vulnerability: String,
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_class: Option<SizeClass>,
}

/// Labeled embeddings for one (vulnerability, size class).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingIndex {
    pub vulnerability: String,
    pub size_class: Option<SizeClass>,
    pub dimension: usize,
    entries: Vec<IndexEntry>,
}

impl TrainingIndex {
    pub fn new(vulnerability: &str, dimension: usize) -> Self {
        TrainingIndex { vulnerability: vulnerability.to_string(), size_class: None, dimension, entries: Vec::new() }
    }

    pub fn from_entries(vulnerability: &str, dimension: usize, entries: Vec<IndexEntry>) -> Result<Self, SiblingError> {
        let mut index = Self::new(vulnerability, dimension);
        for e in entries {
            index.push(e)?;
        }
        Ok(index)
    }

    pub fn push(&mut self, entry: IndexEntry) -> Result<(), SiblingError> {
        if entry.vector.len() != self.dimension {
            return Err(SiblingError::DimensionMismatch { expected: self.dimension, got: entry.vector.len() });
        }
        if self.entries.iter().any(|e| e.id == entry.id) {
            return Err(SiblingError::DuplicateId(entry.id));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn header(&self) -> IndexHeader {
        IndexHeader { vulnerability: self.vulnerability.clone(), dimension: self.dimension, size_class: self.size_class }
    }

    /// JSONL: a header object, then one `{id, label, vector}` per line.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<(), SiblingError> {
        serde_json::to_writer(&mut w, &self.header()).map_err(std::io::Error::from)?;
        writeln!(w)?;
        for e in &self.entries {
            serde_json::to_writer(&mut w, e).map_err(std::io::Error::from)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self, SiblingError> {
        let mut lines = r.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
        let (_, first) = lines.next().ok_or(SiblingError::Malformed { line: 1, reason: "missing header".into() })?;
        let header: IndexHeader =
            serde_json::from_str(&first?).map_err(|e| SiblingError::Malformed { line: 1, reason: e.to_string() })?;
        let mut index = Self::new(&header.vulnerability, header.dimension);
        index.size_class = header.size_class;
        let mut seen = HashSet::new();
        for (i, line) in lines {
            let entry: IndexEntry =
                serde_json::from_str(&line?).map_err(|e| SiblingError::Malformed { line: i + 1, reason: e.to_string() })?;
            if entry.vector.len() != index.dimension {
                return Err(SiblingError::Malformed {
                    line: i + 1,
                    reason: format!("vector has {} values, header says {}", entry.vector.len(), index.dimension),
                });
            }
            if !seen.insert(entry.id.clone()) {
                return Err(SiblingError::DuplicateId(entry.id));
            }
            if entry.label > 1 {
                return Err(SiblingError::Malformed { line: i + 1, reason: format!("label {} is not 0 or 1", entry.label) });
            }
            index.entries.push(entry);
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<(), SiblingError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(&mut w)?;
        Ok(w.flush()?)
    }

    pub fn load(path: &Path) -> Result<Self, SiblingError> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiblingConfig {
    pub max_distance: f64,
    pub step: f64,
}

impl Default for SiblingConfig {
    fn default() -> Self {
        SiblingConfig { max_distance: 0.1, step: 0.00001 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Vulnerable,
    NonVulnerable,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Voter {
    pub id: String,
    pub distance: f64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiblingVerdict {
    pub outcome: Outcome,
    pub band_threshold: Option<f64>,
    pub voters: Vec<Voter>,
}

impl SiblingVerdict {
    pub fn is_known(&self) -> bool {
        self.outcome != Outcome::Unknown
    }

    /// Fraction of voters labeled vulnerable.
    pub fn vote_share(&self) -> Option<f64> {
        if self.voters.is_empty() {
            return None;
        }
        Some(self.voters.iter().filter(|v| v.label == 1).count() as f64 / self.voters.len() as f64)
    }
}

/// Smallest `k·step` (k = 0, 1, …) that is ≥ `d`.
pub fn band_threshold(d: f64, step: f64) -> f64 {
    let mut k = (d / step).ceil().max(0.0);
    while k * step < d {
        k += 1.0;
    }
    while k > 0.0 && (k - 1.0) * step >= d {
        k -= 1.0;
    }
    k * step
}

pub fn sibling_lookup(q: &[f32], index: &TrainingIndex, config: &SiblingConfig) -> Result<SiblingVerdict, SiblingError> {
    if index.is_empty() {
        return Err(SiblingError::EmptyIndex);
    }
    if q.len() != index.dimension {
        return Err(SiblingError::DimensionMismatch { expected: index.dimension, got: q.len() });
    }
    let distances: Vec<f64> = index.entries.iter().map(|e| euclidean(q, &e.vector)).collect::<Result<_, _>>()?;
    let nearest = distances.iter().cloned().fold(f64::INFINITY, f64::min);
    if nearest > config.max_distance {
        return Ok(SiblingVerdict { outcome: Outcome::Unknown, band_threshold: None, voters: Vec::new() });
    }
    let t = band_threshold(nearest, config.step);
    let mut voters: Vec<Voter> = index
        .entries
        .iter()
        .zip(&distances)
        .filter(|(_, &d)| d <= t)
        .map(|(e, &d)| Voter { id: e.id.clone(), distance: d, label: e.label })
        .collect();
    voters.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.id.cmp(&b.id)));
    let yes = voters.iter().filter(|v| v.label == 1).count();
    let outcome = if 2 * yes > voters.len() { Outcome::Vulnerable } else { Outcome::NonVulnerable };
    Ok(SiblingVerdict { outcome, band_threshold: Some(t), voters })
}

/// Lookups for many queries, in order.
pub fn sibling_lookup_batch(
    queries: &[Vec<f32>],
    index: &TrainingIndex,
    config: &SiblingConfig,
    exec: Execution,
) -> Result<Vec<SiblingVerdict>, SiblingError> {
    par::map(exec, queries, |q| sibling_lookup(q, index, config)).into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contradiction {
    pub id_a: String,
    pub id_b: String,
    pub distance: f64,
}

/// All differently labeled pairs within `epsilon`, ids ordered within each
/// pair, sorted by distance then ids.
///
/// Entries are visited in norm order: since `|‖a‖ − ‖b‖| ≤ ‖a − b‖`, the
/// inner scan stops once norms differ by more than `epsilon`.
pub fn find_contradictions(index: &TrainingIndex, epsilon: f64, exec: Execution) -> Vec<Contradiction> {
    let entries = &index.entries;
    let norms: Vec<f64> =
        entries.iter().map(|e| e.vector.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(a.cmp(&b)));
    // Slack absorbs rounding in the norms themselves.
    let reach = epsilon + 1e-9 * (1.0 + epsilon);
    let per_row = par::map_range(exec, order.len(), |i| {
        let a = order[i];
        let mut found = Vec::new();
        for &b in &order[i + 1..] {
            if norms[b] - norms[a] > reach {
                break;
            }
            if entries[a].label == entries[b].label {
                continue;
            }
            let d = euclidean(&entries[a].vector, &entries[b].vector).expect("index dimensions agree");
            if d <= epsilon {
                let (x, y) = if entries[a].id <= entries[b].id { (a, b) } else { (b, a) };
                found.push(Contradiction { id_a: entries[x].id.clone(), id_b: entries[y].id.clone(), distance: d });
            }
        }
        found
    });
    let mut all: Vec<Contradiction> = per_row.into_iter().flatten().collect();
    all.sort_by(|a, b| {
        a.distance.partial_cmp(&b.distance).unwrap_or(Ordering::Equal).then_with(|| a.id_a.cmp(&b.id_a)).then_with(|| a.id_b.cmp(&b.id_b))
    });
    all
}

/// One contract embedding, as exported for index building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub address: String,
    pub vulnerability: String,
    pub vector: Vec<f32>,
}

pub fn read_embeddings(r: impl BufRead) -> Result<Vec<EmbeddingRecord>, SiblingError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SiblingError::Malformed { line: i + 1, reason: e.to_string() })?);
    }
    Ok(out)
}
