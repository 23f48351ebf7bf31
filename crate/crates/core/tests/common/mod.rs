//! Fixtures, brute-force oracles and a gradient-check harness shared by the
//! integration tests. Oracles are written independently of the library
//! code they are compared against.

#![allow(dead_code)]

use std::path::PathBuf;

use evmscan::nn::{Checkable, Parameter, RngStream, Tensor};
use evmscan::sibling::IndexEntry;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// One row of a published results table.
#[derive(Debug, Clone)]
pub struct TableRow {
    pub vulnerability: String,
    pub test_size: u64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    /// Stated percentages by column name (accuracy, tpr, tnr, fpr, fnr, auc).
    pub stated: Vec<(String, f64)>,
}

impl TableRow {
    pub fn stated(&self, column: &str) -> Option<f64> {
        self.stated.iter().find(|(c, _)| c == column).map(|(_, v)| *v)
    }
}

pub fn load_table(name: &str) -> Vec<TableRow> {
    let text = std::fs::read_to_string(fixture_path(&format!("tables/{name}"))).expect("fixture readable");
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().expect("header").split('\t').collect();
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let cells: Vec<&str> = line.split('\t').collect();
            assert_eq!(cells.len(), header.len(), "ragged row: {line}");
            let get = |col: &str| cells[header.iter().position(|h| *h == col).expect("column")];
            let count = |col: &str| get(col).parse::<u64>().expect("count");
            let stated = header
                .iter()
                .zip(&cells)
                .filter_map(|(h, c)| c.strip_suffix('%').map(|v| (h.to_string(), v.parse::<f64>().expect("percent"))))
                .collect();
            TableRow {
                vulnerability: get("vulnerability").to_string(),
                test_size: count("test_size"),
                tp: count("tp"),
                fp: count("fp"),
                tn: count("tn"),
                fn_: count("fn"),
                stated,
            }
        })
        .collect()
}

/// Mann-Whitney by pair counting, with half credit for ties.
pub fn auc_pairs(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(truth).filter(|(_, &t)| t).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(truth).filter(|(_, &t)| !t).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

pub fn dist(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        s += d * d;
    }
    s.sqrt()
}

/// What the sibling rule should say, by exhaustive scan.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleVerdict {
    /// None for Unknown, otherwise the vote result.
    pub vulnerable: Option<bool>,
    pub threshold: Option<f64>,
    pub voters: Vec<String>,
}

pub fn sibling_oracle(q: &[f32], entries: &[IndexEntry], max_distance: f64, step: f64) -> OracleVerdict {
    let d: Vec<f64> = entries.iter().map(|e| dist(q, &e.vector)).collect();
    let best = d.iter().cloned().fold(f64::INFINITY, f64::min);
    if best > max_distance {
        return OracleVerdict { vulnerable: None, threshold: None, voters: vec![] };
    }
    // Walk the step grid from just below the minimum.
    let mut k = ((best / step).floor() - 2.0).max(0.0);
    while k * step < best {
        k += 1.0;
    }
    let t = k * step;
    let mut voters: Vec<(f64, String, u8)> = entries
        .iter()
        .zip(&d)
        .filter(|(_, &x)| x <= t)
        .map(|(e, &x)| (x, e.id.clone(), e.label))
        .collect();
    voters.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let yes = voters.iter().filter(|v| v.2 == 1).count();
    let no = voters.len() - yes;
    OracleVerdict { vulnerable: Some(yes > no), threshold: Some(t), voters: voters.into_iter().map(|v| v.1).collect() }
}

/// Every differently labeled pair within `eps`, exhaustively.
pub fn contradictions_oracle(entries: &[IndexEntry], eps: f64) -> Vec<(String, String, f64)> {
    let mut out = Vec::new();
    for i in 0..entries.len() {
        for j in i + 1..entries.len() {
            if entries[i].label == entries[j].label {
                continue;
            }
            let d = dist(&entries[i].vector, &entries[j].vector);
            if d <= eps {
                let (a, b) = if entries[i].id <= entries[j].id { (i, j) } else { (j, i) };
                out.push((entries[a].id.clone(), entries[b].id.clone(), d));
            }
        }
    }
    out.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap().then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    out
}

pub fn random_tensor(rng: &mut RngStream, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-scale, scale)).collect()).unwrap()
}

/// Random graph on `n` nodes: a spanning path plus extra random edges.
pub fn random_edges(rng: &mut RngStream, n: usize, extra: usize) -> Vec<(usize, usize)> {
    let mut e: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    for _ in 0..extra {
        e.push((rng.index(n), rng.index(n)));
    }
    e
}

/// A differentiable computation over some parameters, for [`Harness`].
pub trait Probe {
    fn params(&mut self) -> Vec<&mut Parameter<f64>>;
    /// Scalar loss. With `backward`, gradients are accumulated into the
    /// (already zeroed) parameter grads.
    fn run(&mut self, backward: bool) -> f64;
}

/// Exposes a sample of coordinates (a few from every tensor) of a probe to
/// the central-difference checker. `corrupt` scales the analytic gradient of
/// one tensor, as a negative control.
pub struct Harness<P: Probe> {
    pub probe: P,
    coords: Vec<(usize, usize)>,
    /// Current value at each sampled coordinate.
    values: Vec<f64>,
    pub corrupt: Option<(usize, f64)>,
}

impl<P: Probe> Harness<P> {
    pub fn new(mut probe: P, per_tensor: usize, seed: u64) -> Self {
        let mut rng = RngStream::new(seed);
        let mut coords = Vec::new();
        for (t, p) in probe.params().into_iter().enumerate() {
            let n = p.value.len();
            let mut idx: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut idx);
            idx.truncate(per_tensor);
            idx.sort_unstable();
            coords.extend(idx.into_iter().map(|i| (t, i)));
        }
        let params = probe.params();
        let values = coords.iter().map(|&(t, j)| params[t].value.data()[j]).collect();
        drop(params);
        Harness { probe, coords, values, corrupt: None }
    }

    pub fn tensors(&mut self) -> usize {
        self.probe.params().len()
    }
}

impl<P: Probe> Checkable for Harness<P> {
    fn num_params(&self) -> usize {
        self.coords.len()
    }

    fn get_param(&self, i: usize) -> f64 {
        self.values[i]
    }

    fn set_param(&mut self, i: usize, v: f64) {
        let (t, j) = self.coords[i];
        self.probe.params()[t].value.data_mut()[j] = v;
        self.values[i] = v;
    }

    fn loss(&mut self) -> f64 {
        self.probe.run(false)
    }

    fn gradient(&mut self) -> Vec<f64> {
        for p in self.probe.params() {
            p.zero_grad();
        }
        self.probe.run(true);
        let corrupt = self.corrupt;
        let params = self.probe.params();
        self.coords
            .iter()
            .map(|&(t, j)| {
                let g = params[t].grad.data()[j];
                match corrupt {
                    Some((ct, f)) if ct == t => g * f,
                    _ => g,
                }
            })
            .collect()
    }
}

/// `Σ r ⊙ y`, with its gradient `r`.
pub fn readout(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}
