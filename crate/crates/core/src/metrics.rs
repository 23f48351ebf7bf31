//! Confusion-matrix metrics, balanced accuracy and ROC AUC.
//!
//! Rates are kept as exact fractions so identities like TPR + FNR = 1 hold
//! exactly; they become floats only for display.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("length mismatch: {predictions} predictions vs {truth} labels")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("empty confusion matrix")]
    EmptyMatrix,
    #[error("degenerate class: no {0} examples")]
    DegenerateClass(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        ConfusionMatrix { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix::new(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn_ + other.fn_)
    }
}

/// An exact fraction `num / den` with `den > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub num: u64,
    pub den: u64,
}

impl Rate {
    fn new(num: u64, den: u64, class: &'static str) -> Result<Rate, MetricsError> {
        if den == 0 {
            return Err(MetricsError::DegenerateClass(class));
        }
        Ok(Rate { num, den })
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.value()
    }

    /// Percentage in tenths of a point, rounded half up.
    pub fn percent_tenths(&self) -> u64 {
        let (n, d) = (self.num as u128, self.den as u128);
        ((2000 * n + d) / (2 * d)) as u64
    }

    /// Same value as `self`, compared exactly.
    pub fn same_value(&self, other: &Rate) -> bool {
        self.num as u128 * other.den as u128 == other.num as u128 * self.den as u128
    }

    /// `self + other` as a fraction.
    pub fn add(&self, other: &Rate) -> Rate {
        let (a, b, c, d) = (self.num as u128, self.den as u128, other.num as u128, other.den as u128);
        reduce(a * d + c * b, b * d)
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn reduce(num: u128, den: u128) -> Rate {
    let g = gcd(num, den).max(1);
    Rate { num: (num / g) as u64, den: (den / g) as u64 }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_percent_tenths(self.percent_tenths()))
    }
}

fn format_percent_tenths(t: u64) -> String {
    format!("{}.{}%", t / 10, t % 10)
}

/// Render a fraction in [0, 1] as a one-decimal percentage, rounding half up.
pub fn format_percent(x: f64) -> String {
    let tenths = (x * 1000.0 + 0.5 + 1e-9).floor().max(0.0) as u64;
    format_percent_tenths(tenths)
}

pub fn confusion(predictions: &[bool], truth: &[bool]) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != truth.len() {
        return Err(MetricsError::LengthMismatch { predictions: predictions.len(), truth: truth.len() });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(truth) {
        cm.record(p, t);
    }
    Ok(cm)
}

pub fn accuracy_rate(cm: &ConfusionMatrix) -> Result<Rate, MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    Ok(Rate { num: cm.tp + cm.tn, den: cm.total() })
}

/// `(TP + TN) / total`.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    accuracy_rate(cm).map(|r| r.value())
}

pub fn tpr(cm: &ConfusionMatrix) -> Result<Rate, MetricsError> {
    Rate::new(cm.tp, cm.positives(), "positive")
}

pub fn tnr(cm: &ConfusionMatrix) -> Result<Rate, MetricsError> {
    Rate::new(cm.tn, cm.negatives(), "negative")
}

pub fn fpr(cm: &ConfusionMatrix) -> Result<Rate, MetricsError> {
    Rate::new(cm.fp, cm.negatives(), "negative")
}

pub fn fnr(cm: &ConfusionMatrix) -> Result<Rate, MetricsError> {
    Rate::new(cm.fn_, cm.positives(), "positive")
}

/// `(TPR + TNR) / 2` as an exact fraction.
pub fn balanced_accuracy_rate(cm: &ConfusionMatrix) -> Result<Rate, MetricsError> {
    let sum = tpr(cm)?.add(&tnr(cm)?);
    Ok(reduce(sum.num as u128, 2 * sum.den as u128))
}

pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    balanced_accuracy_rate(cm).map(|r| r.value())
}

/// Area under the ROC curve by a trapezoidal sweep over descending score
/// groups; tied scores form one diagonal segment, which is the ½-credit
/// of the Mann-Whitney statistic.
pub fn auc(scores: &[f64], truth: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != truth.len() {
        return Err(MetricsError::LengthMismatch { predictions: scores.len(), truth: truth.len() });
    }
    let p = truth.iter().filter(|&&t| t).count() as f64;
    let n = truth.len() as f64 - p;
    if p == 0.0 {
        return Err(MetricsError::DegenerateClass("positive"));
    }
    if n == 0.0 {
        return Err(MetricsError::DegenerateClass("negative"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let (mut tp, mut area) = (0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let (mut dtp, mut dfp) = (0.0, 0.0);
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if truth[idx[i]] {
                dtp += 1.0;
            } else {
                dfp += 1.0;
            }
            i += 1;
        }
        area += dfp * (tp + dtp / 2.0);
        tp += dtp;
    }
    Ok(area / (p * n))
}

/// Every metric for one confusion matrix; entries whose denominators are
/// zero are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub test_size: u64,
    #[serde(flatten)]
    pub confusion: ConfusionMatrix,
    pub accuracy: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub auc: Option<f64>,
}

pub fn report(cm: &ConfusionMatrix, scores: Option<(&[f64], &[bool])>) -> MetricReport {
    MetricReport {
        test_size: cm.total(),
        confusion: *cm,
        accuracy: accuracy(cm).ok(),
        balanced_accuracy: balanced_accuracy(cm).ok(),
        tpr: tpr(cm).ok().map(|r| r.value()),
        tnr: tnr(cm).ok().map(|r| r.value()),
        fpr: fpr(cm).ok().map(|r| r.value()),
        fnr: fnr(cm).ok().map(|r| r.value()),
        auc: scores.and_then(|(s, t)| auc(s, t).ok()),
    }
}

/// Which formula fills the "Accuracy" column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccuracyKind {
    Plain,
    Balanced,
}

/// Aligned text table: Vulnerability, Test size, TP, FP, TN, FN, Accuracy,
/// TPR, TNR, FPR, FNR and, when any row has one, AUC.
pub fn render_table(rows: &[(String, MetricReport)], kind: AccuracyKind) -> String {
    let with_auc = rows.iter().any(|(_, r)| r.auc.is_some());
    let mut header: Vec<String> =
        ["Vulnerability", "Test size", "TP", "FP", "TN", "FN", "Accuracy", "TPR", "TNR", "FPR", "FNR"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    if with_auc {
        header.push("AUC".into());
    }
    let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), format_percent);
    let mut table = vec![header];
    for (name, r) in rows {
        let acc = match kind {
            AccuracyKind::Plain => r.accuracy,
            AccuracyKind::Balanced => r.balanced_accuracy,
        };
        let c = &r.confusion;
        let mut line = vec![
            name.clone(),
            r.test_size.to_string(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            c.fn_.to_string(),
            pct(acc),
            pct(r.tpr),
            pct(r.tnr),
            pct(r.fpr),
            pct(r.fnr),
        ];
        if with_auc {
            line.push(pct(r.auc));
        }
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len()).map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &table {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, cell)| if i == 0 { format!("{cell:<w$}", w = widths[i]) } else { format!("{cell:>w$}", w = widths[i]) })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    let note = match kind {
        AccuracyKind::Balanced => "accuracy column: balanced, (TPR+TNR)/2",
        AccuracyKind::Plain => "accuracy column: plain, (TP+TN)/total",
    };
    out.push_str(note);
    out.push('\n');
    out
}
