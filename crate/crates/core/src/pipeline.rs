//! Dataset handling and the end-to-end decision path: route by size, ask the
//! sibling detector first, fall back to the classifier.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cfg::{build_cfg, ControlFlowGraph};
use crate::disasm::{disassemble, parse_hex, DisassemblyListing, RawBytecode};
use crate::metrics::{render_table, report, AccuracyKind, ConfusionMatrix, MetricReport};
use crate::model::{load_encoder, load_model, Classification, ModelError, VulnerabilityModel};
use crate::n2v::{encode_contract_nodes, DanEncoder, NodeEmbeddingMatrix, TokenVocab};
use crate::par::{self, Execution};
use crate::sc2v::SizeClass;
use crate::sibling::{sibling_lookup, Outcome, SiblingConfig, SiblingError, SiblingVerdict, TrainingIndex};

/// Default model list for large contracts.
pub const LARGE_VULNERABILITIES: [&str; 29] = [
    "shadowing-state",
    "suicidal",
    "uninitialized-state",
    "arbitrary-send",
    "controlled-array-length",
    "controlled-delegatecall",
    "reentrancy-eth",
    "reentrancy-no-eth",
    "unchecked-transfer",
    "erc20-interface",
    "incorrect-equality",
    "locked-ether",
    "mapping-deletion",
    "shadowing-abstract",
    "tautology",
    "write-after-write",
    "constant-function-asm",
    "constant-function-state",
    "divide-before-multiply",
    "tx-origin",
    "unchecked-lowlevel",
    "unchecked-send",
    "uninitialized-local",
    "unused-return",
    "incorrect-modifier",
    "shadowing-builtin",
    "shadowing-local",
    "variable-scope",
    "void-cst",
];

/// Default model list for small contracts.
pub const SMALL_VULNERABILITIES: [&str; 21] = [
    "shadowing-state",
    "suicidal",
    "uninitialized-state",
    "arbitrary-send",
    "controlled-array-length",
    "controlled-delegatecall",
    "reentrancy-eth",
    "reentrancy-no-eth",
    "unchecked-transfer",
    "erc20-interface",
    "incorrect-equality",
    "locked-ether",
    "constant-function-asm",
    "divide-before-multiply",
    "unchecked-lowlevel",
    "unchecked-send",
    "uninitialized-local",
    "unused-return",
    "incorrect-modifier",
    "shadowing-builtin",
    "shadowing-local",
];

/// Contracts below this many instructions use the small models.
pub const SMALL_LIMIT: usize = 750;
/// Largest size the large models were meant for.
pub const LARGE_LIMIT: usize = 10_000;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate address {address} on line {line}")]
    DuplicateAddress { line: usize, address: String },
    #[error("{address} has no label for {vulnerability}")]
    MissingLabels { address: String, vulnerability: String },
    #[error("no encoder in {0}")]
    MissingEncoder(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sibling(#[from] SiblingError),
    #[error("rpc error: {0}")]
    Rpc(String),
    #[error("rpc request timed out")]
    Timeout,
    #[error("no code at this address")]
    EmptyCode,
}

/// One contract: address, code and optional ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractRecord {
    pub address: String,
    pub bytecode: RawBytecode,
    pub labels: BTreeMap<String, u8>,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    address: String,
    bytecode: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    labels: BTreeMap<String, u8>,
}

impl ContractRecord {
    pub fn new(address: impl Into<String>, bytecode: RawBytecode) -> Self {
        ContractRecord { address: address.into(), bytecode, labels: BTreeMap::new() }
    }

    pub fn with_label(mut self, vulnerability: &str, label: bool) -> Self {
        self.labels.insert(vulnerability.to_string(), label as u8);
        self
    }

    pub fn label(&self, vulnerability: &str) -> Option<bool> {
        self.labels.get(vulnerability).map(|&v| v != 0)
    }
}

/// Parse JSONL records, one per line. Blank lines are skipped.
pub fn parse_records(reader: impl BufRead) -> Result<Vec<ContractRecord>, PipelineError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RecordLine =
            serde_json::from_str(&line).map_err(|e| PipelineError::MalformedRecord { line: n, reason: e.to_string() })?;
        let bytecode =
            parse_hex(&raw.bytecode).map_err(|e| PipelineError::MalformedRecord { line: n, reason: e.to_string() })?;
        if let Some((name, v)) = raw.labels.iter().find(|(_, &v)| v > 1) {
            return Err(PipelineError::MalformedRecord { line: n, reason: format!("label {name}={v} is not 0 or 1") });
        }
        if !seen.insert(raw.address.to_ascii_lowercase()) {
            return Err(PipelineError::DuplicateAddress { line: n, address: raw.address });
        }
        out.push(ContractRecord { address: raw.address, bytecode, labels: raw.labels });
    }
    Ok(out)
}

pub fn ingest(path: &Path) -> Result<Vec<ContractRecord>, PipelineError> {
    parse_records(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn write_records(mut w: impl Write, records: &[ContractRecord]) -> Result<(), PipelineError> {
    for r in records {
        let line = RecordLine { address: r.address.clone(), bytecode: r.bytecode.to_hex(), labels: r.labels.clone() };
        serde_json::to_writer(&mut w, &line).map_err(std::io::Error::from)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Train / validation / test partition in input order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

/// First 60% train, next 20% validation, the rest test (both cuts floored).
pub fn split_dataset<T: Clone>(records: &[T]) -> DatasetSplit<T> {
    let n = records.len();
    let train = n * 6 / 10;
    let valid = n * 2 / 10;
    DatasetSplit {
        train: records[..train].to_vec(),
        valid: records[train..train + valid].to_vec(),
        test: records[train + valid..].to_vec(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Routing {
    pub size_class: SizeClass,
    /// Larger than anything the large models were trained on.
    pub oversize: bool,
}

pub fn route_instruction_count(n: usize) -> Routing {
    if n < SMALL_LIMIT {
        Routing { size_class: SizeClass::Small, oversize: false }
    } else {
        Routing { size_class: SizeClass::Large, oversize: n > LARGE_LIMIT }
    }
}

pub fn route_by_size(listing: &DisassemblyListing) -> Routing {
    route_instruction_count(listing.len())
}

/// Everything needed at inference time, loaded once.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub encoder: DanEncoder,
    pub vocab: TokenVocab,
    pub models: BTreeMap<(String, SizeClass), VulnerabilityModel>,
    pub indices: BTreeMap<(String, SizeClass), TrainingIndex>,
}

impl ModelSet {
    pub fn new(encoder: DanEncoder, vocab: TokenVocab) -> Self {
        ModelSet { encoder, vocab, models: BTreeMap::new(), indices: BTreeMap::new() }
    }

    pub fn insert_model(&mut self, model: VulnerabilityModel) {
        self.models.insert((model.vulnerability.clone(), model.size_class), model);
    }

    /// Indices without a size class in their header are taken as large,
    /// since only large contracts consult siblings.
    pub fn insert_index(&mut self, index: TrainingIndex) {
        let size = index.size_class.unwrap_or(SizeClass::Large);
        self.indices.insert((index.vulnerability.clone(), size), index);
    }

    pub fn model(&self, vulnerability: &str, size: SizeClass) -> Option<&VulnerabilityModel> {
        self.models.get(&(vulnerability.to_string(), size))
    }

    pub fn index(&self, vulnerability: &str, size: SizeClass) -> Option<&TrainingIndex> {
        self.indices.get(&(vulnerability.to_string(), size))
    }

    /// Every vulnerability with at least one model, sorted.
    pub fn vulnerabilities(&self) -> Vec<String> {
        let mut v: Vec<String> = self.models.keys().map(|(n, _)| n.clone()).collect();
        v.dedup();
        v
    }

    /// Loads `encoder.dlva` and every other `*.dlva` in `models_dir`, and
    /// every `*.index.jsonl` in `indices_dir`.
    pub fn load_dir(models_dir: &Path, indices_dir: Option<&Path>) -> Result<Self, PipelineError> {
        let encoder_path = models_dir.join("encoder.dlva");
        if !encoder_path.exists() {
            return Err(PipelineError::MissingEncoder(models_dir.display().to_string()));
        }
        let (encoder, vocab) = load_encoder(&encoder_path)?;
        let mut set = ModelSet::new(encoder, vocab);
        for path in sorted_entries(models_dir)? {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if name.ends_with(".dlva") && name != "encoder.dlva" {
                set.insert_model(load_model(&path)?);
            }
        }
        if let Some(dir) = indices_dir {
            for path in sorted_entries(dir)? {
                if path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".index.jsonl")) {
                    set.insert_index(TrainingIndex::load(&path)?);
                }
            }
        }
        Ok(set)
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>, PipelineError> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        paths.push(entry?.path());
    }
    paths.sort();
    Ok(paths)
}

/// File name for a saved model: `{vulnerability}.{size}.dlva`.
pub fn model_file_name(vulnerability: &str, size: SizeClass) -> String {
    format!("{vulnerability}.{size}.dlva")
}

pub fn index_file_name(vulnerability: &str, size: SizeClass) -> String {
    format!("{vulnerability}.{size}.index.jsonl")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeConfig {
    pub sibling: SiblingConfig,
    /// Consult the sibling detector for large contracts.
    pub use_sibling: bool,
    /// Restrict to these vulnerabilities. `None` means the default list for
    /// the routed size class plus anything else that has a model.
    pub vulnerabilities: Option<Vec<String>>,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig { sibling: SiblingConfig::default(), use_sibling: true, vulnerabilities: None }
    }
}

impl AnalyzeConfig {
    fn vulnerability_list(&self, models: &ModelSet, size: SizeClass) -> Vec<String> {
        if let Some(v) = &self.vulnerabilities {
            return v.clone();
        }
        let defaults: &[&str] = match size {
            SizeClass::Large => &LARGE_VULNERABILITIES,
            SizeClass::Small => &SMALL_VULNERABILITIES,
        };
        let mut list: Vec<String> = defaults.iter().map(|s| s.to_string()).collect();
        for (name, s) in models.models.keys() {
            if *s == size && !list.contains(name) {
                list.push(name.clone());
            }
        }
        list
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Vulnerable,
    NonVulnerable,
    /// No model for this (vulnerability, size class).
    Unsupported,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "SD")]
    Sd,
    #[serde(rename = "CC")]
    Cc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnerabilityResult {
    pub vulnerability: String,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    /// Classifier probability, present when the classifier ran.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probability: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sibling: Option<SiblingVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractReport {
    pub address: String,
    pub size_class: SizeClass,
    pub instruction_count: usize,
    pub oversize: bool,
    pub cfg_nodes: usize,
    pub results: Vec<VulnerabilityResult>,
    /// Wall-clock analysis time.
    pub elapsed_secs: f64,
}

/// One batch row: a report, or the error that stopped this contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnalysisRow {
    Report(ContractReport),
    Failed { address: String, error: String },
}

impl AnalysisRow {
    pub fn address(&self) -> &str {
        match self {
            AnalysisRow::Report(r) => &r.address,
            AnalysisRow::Failed { address, .. } => address,
        }
    }

    pub fn report(&self) -> Option<&ContractReport> {
        match self {
            AnalysisRow::Report(r) => Some(r),
            AnalysisRow::Failed { .. } => None,
        }
    }
}

/// Shared front half of the pipeline for one contract.
struct Prepared {
    listing_len: usize,
    routing: Routing,
    cfg: ControlFlowGraph,
    nodes: NodeEmbeddingMatrix,
}

fn prepare(record: &ContractRecord, models: &ModelSet) -> Result<Prepared, PipelineError> {
    if record.bytecode.is_empty() {
        return Err(PipelineError::EmptyCode);
    }
    let listing = disassemble(&record.bytecode);
    let routing = route_by_size(&listing);
    if routing.oversize {
        warn!("{}: {} instructions is beyond the large-model range", record.address, listing.len());
    }
    let cfg = build_cfg(&listing);
    let nodes = encode_contract_nodes(&cfg, &models.encoder, &models.vocab);
    Ok(Prepared { listing_len: listing.len(), routing, cfg, nodes })
}

/// What the two detectors say about one (contract, vulnerability).
struct Assessment {
    sibling: Option<SiblingVerdict>,
    probability: Option<f32>,
    model: Option<Classification>,
}

fn assess(
    prep: &Prepared,
    model: &VulnerabilityModel,
    index: Option<&TrainingIndex>,
    sibling: &SiblingConfig,
    always_cc: bool,
) -> Result<Assessment, PipelineError> {
    let embedding = model.embed(&prep.cfg, &prep.nodes)?;
    let sd = match (prep.routing.size_class, index) {
        (SizeClass::Large, Some(index)) => Some(sibling_lookup(&embedding, index, sibling)?),
        _ => None,
    };
    let need_cc = always_cc || sd.as_ref().is_none_or(|v| !v.is_known());
    let (probability, model_verdict) = if need_cc {
        let p = model.probability(&embedding)?;
        (Some(p), Some(model.classify(p)))
    } else {
        (None, None)
    };
    Ok(Assessment { sibling: sd, probability, model: model_verdict })
}

fn verdict_of(c: Classification) -> Verdict {
    match c {
        Classification::Vulnerable => Verdict::Vulnerable,
        Classification::NonVulnerable => Verdict::NonVulnerable,
    }
}

fn sd_verdict(v: &SiblingVerdict) -> Option<Verdict> {
    match v.outcome {
        Outcome::Vulnerable => Some(Verdict::Vulnerable),
        Outcome::NonVulnerable => Some(Verdict::NonVulnerable),
        Outcome::Unknown => None,
    }
}

/// Disassemble, build the CFG, embed, then per vulnerability: sibling
/// lookup (large contracts only) and the classifier when siblings abstain.
pub fn analyze(record: &ContractRecord, models: &ModelSet, config: &AnalyzeConfig) -> Result<ContractReport, PipelineError> {
    let start = Instant::now();
    let prep = prepare(record, models)?;
    let size = prep.routing.size_class;
    let mut results = Vec::new();
    for vuln in config.vulnerability_list(models, size) {
        let Some(model) = models.model(&vuln, size) else {
            results.push(VulnerabilityResult {
                vulnerability: vuln,
                verdict: Verdict::Unsupported,
                provenance: None,
                probability: None,
                sibling: None,
            });
            continue;
        };
        let index = if config.use_sibling { models.index(&vuln, size) } else { None };
        let a = assess(&prep, model, index, &config.sibling, false)?;
        let (verdict, provenance) = match a.sibling.as_ref().and_then(sd_verdict) {
            Some(v) => (v, Provenance::Sd),
            None => (verdict_of(a.model.expect("classifier ran when siblings abstained")), Provenance::Cc),
        };
        results.push(VulnerabilityResult {
            vulnerability: vuln,
            verdict,
            provenance: Some(provenance),
            probability: a.probability,
            sibling: a.sibling,
        });
    }
    Ok(ContractReport {
        address: record.address.clone(),
        size_class: size,
        instruction_count: prep.listing_len,
        oversize: prep.routing.oversize,
        cfg_nodes: prep.cfg.node_count(),
        results,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

/// Analyze many contracts. Rows come back in input order, and a failing
/// contract yields a `Failed` row instead of aborting the batch.
pub fn analyze_batch(
    records: &[ContractRecord],
    models: &ModelSet,
    config: &AnalyzeConfig,
    exec: Execution,
) -> Vec<AnalysisRow> {
    par::map(exec, records, |r| match analyze(r, models, config) {
        Ok(report) => AnalysisRow::Report(report),
        Err(e) => AnalysisRow::Failed { address: r.address.clone(), error: e.to_string() },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Classifier on every contract.
    CcOnly,
    /// Only contracts the sibling detector can judge, judged by it.
    SdEasy,
    /// The complement of `SdEasy`, judged by the classifier.
    CcHard,
    /// Siblings when they can judge, classifier otherwise.
    #[serde(rename = "sd+cc")]
    SdCc,
}

impl std::str::FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cc-only" => Ok(EvalMode::CcOnly),
            "sd-easy" => Ok(EvalMode::SdEasy),
            "cc-hard" => Ok(EvalMode::CcHard),
            "sd+cc" => Ok(EvalMode::SdCc),
            _ => Err(format!("unknown mode {s:?} (expected cc-only, sd-easy, cc-hard or sd+cc)")),
        }
    }
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalMode::CcOnly => "cc-only",
            EvalMode::SdEasy => "sd-easy",
            EvalMode::CcHard => "cc-hard",
            EvalMode::SdCc => "sd+cc",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub vulnerability: String,
    pub report: MetricReport,
    /// Test contracts of a size class with no model for this vulnerability.
    pub unsupported: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mode: EvalMode,
    pub rows: Vec<EvaluationRow>,
    /// Contracts that failed before any verdict (bad code, for instance).
    pub failed: Vec<(String, String)>,
}

impl EvaluationReport {
    /// Aligned table in the usual column order, balanced accuracy.
    pub fn to_table(&self) -> String {
        let rows: Vec<(String, MetricReport)> =
            self.rows.iter().map(|r| (r.vulnerability.clone(), r.report.clone())).collect();
        render_table(&rows, AccuracyKind::Balanced)
    }
}

#[derive(Default)]
struct Tally {
    cm: ConfusionMatrix,
    scores: Vec<f64>,
    truth: Vec<bool>,
    unsupported: usize,
}

/// Score the detectors on labeled records under one of the four modes.
pub fn evaluate(
    records: &[ContractRecord],
    models: &ModelSet,
    config: &AnalyzeConfig,
    mode: EvalMode,
    exec: Execution,
) -> Result<EvaluationReport, PipelineError> {
    let vulns = config.vulnerabilities.clone().unwrap_or_else(|| models.vulnerabilities());
    for r in records {
        for v in &vulns {
            if r.label(v).is_none() {
                return Err(PipelineError::MissingLabels { address: r.address.clone(), vulnerability: v.clone() });
            }
        }
    }
    let always_cc = matches!(mode, EvalMode::CcOnly);
    let use_sd = !always_cc && config.use_sibling;
    // Per record: one entry per vulnerability, None when unsupported.
    type Decision = Option<(Option<bool>, Option<f64>)>;
    let per_record: Vec<Result<Vec<Decision>, PipelineError>> = par::map(exec, records, |r| {
        let prep = prepare(r, models)?;
        let size = prep.routing.size_class;
        vulns
            .iter()
            .map(|v| {
                let Some(model) = models.model(v, size) else { return Ok(None) };
                let index = if use_sd { models.index(v, size) } else { None };
                let a = assess(&prep, model, index, &config.sibling, always_cc)?;
                let sd = a.sibling.as_ref().and_then(sd_verdict).map(|v| v == Verdict::Vulnerable);
                let cc = a.model.map(|c| c == Classification::Vulnerable);
                let score = a.probability.map(f64::from);
                let decision = match mode {
                    EvalMode::CcOnly => cc.map(|c| (Some(c), score)),
                    EvalMode::SdEasy => Some((sd, None)),
                    EvalMode::CcHard => Some((if sd.is_some() { None } else { cc }, score)),
                    EvalMode::SdCc => Some((sd.or(cc), None)),
                };
                Ok(decision)
            })
            .collect()
    });
    let mut tallies: Vec<Tally> = vulns.iter().map(|_| Tally::default()).collect();
    let mut failed = Vec::new();
    for (r, outcome) in records.iter().zip(per_record) {
        let decisions = match outcome {
            Ok(d) => d,
            Err(e) => {
                failed.push((r.address.clone(), e.to_string()));
                continue;
            }
        };
        for ((v, t), d) in vulns.iter().zip(&mut tallies).zip(decisions) {
            let truth = r.label(v).expect("labels checked above");
            match d {
                None => t.unsupported += 1,
                Some((None, _)) => {}
                Some((Some(pred), score)) => {
                    t.cm.record(pred, truth);
                    if let Some(s) = score {
                        t.scores.push(s);
                        t.truth.push(truth);
                    }
                }
            }
        }
    }
    let rows = vulns
        .into_iter()
        .zip(tallies)
        .map(|(vulnerability, t)| {
            let scored = !t.scores.is_empty() && t.scores.len() as u64 == t.cm.total();
            let report = report(&t.cm, scored.then_some((&t.scores[..], &t.truth[..])));
            EvaluationRow { vulnerability, report, unsupported: t.unsupported }
        })
        .collect();
    Ok(EvaluationReport { mode, rows, failed })
}

/// JSON-RPC client settings for fetching deployed code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RpcConfig {
    pub url: String,
    pub timeout: Duration,
}

impl RpcConfig {
    pub fn new(url: impl Into<String>) -> Self {
        RpcConfig { url: url.into(), timeout: Duration::from_secs(10) }
    }
}

#[derive(Deserialize)]
struct RpcReply {
    result: Option<String>,
    error: Option<serde_json::Value>,
}

/// `eth_getCode` at the latest block.
pub fn fetch_bytecode(rpc: &RpcConfig, address: &str) -> Result<RawBytecode, PipelineError> {
    let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(rpc.timeout)).build().into();
    let body = serde_json::json!({
        "jsonrpc": "2.0",
        "id": 1,
        "method": "eth_getCode",
        "params": [address, "latest"],
    });
    let map_err = |e: ureq::Error| match e {
        ureq::Error::Timeout(_) => PipelineError::Timeout,
        other => PipelineError::Rpc(other.to_string()),
    };
    let reply: RpcReply = agent.post(&rpc.url).send_json(&body).map_err(map_err)?.body_mut().read_json().map_err(map_err)?;
    if let Some(err) = reply.error {
        return Err(PipelineError::Rpc(err.to_string()));
    }
    let hex = reply.result.ok_or_else(|| PipelineError::Rpc("reply has neither result nor error".into()))?;
    let code = parse_hex(&hex).map_err(|e| PipelineError::Rpc(format!("bad code in reply: {e}")))?;
    if code.is_empty() {
        return Err(PipelineError::EmptyCode);
    }
    Ok(code)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let sizes = |n: usize| {
            let v: Vec<usize> = (0..n).collect();
            let s = split_dataset(&v);
            (s.train.len(), s.valid.len(), s.test.len())
        };
        assert_eq!(sizes(10), (6, 2, 2));
        assert_eq!(sizes(0), (0, 0, 0));
        assert_eq!(sizes(7), (4, 1, 2));
        let v: Vec<usize> = (0..13).collect();
        let s = split_dataset(&v);
        assert_eq!([s.train, s.valid, s.test].concat(), v);
    }

    #[test]
    fn routing_boundaries() {
        assert_eq!(route_instruction_count(749).size_class, SizeClass::Small);
        assert_eq!(route_instruction_count(750), Routing { size_class: SizeClass::Large, oversize: false });
        assert_eq!(route_instruction_count(10_000), Routing { size_class: SizeClass::Large, oversize: false });
        assert_eq!(route_instruction_count(10_001), Routing { size_class: SizeClass::Large, oversize: true });
    }

    #[test]
    fn records_parse_and_round_trip() {
        assert!(parse_records(&b""[..]).unwrap().is_empty());
        let text = "{\"address\":\"0x01\",\"bytecode\":\"0x6001\",\"labels\":{\"suicidal\":1}}\n\
                    {\"address\":\"0x02\",\"bytecode\":\"6002\"}\n\
                    {\"address\":\"0x03\",\"bytecode\":\"0x00\"}\n";
        let recs = parse_records(text.as_bytes()).unwrap();
        assert_eq!(recs.iter().map(|r| r.address.as_str()).collect::<Vec<_>>(), ["0x01", "0x02", "0x03"]);
        assert_eq!(recs[0].label("suicidal"), Some(true));
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        let back = parse_records(&buf[..]).unwrap();
        assert_eq!(back.iter().map(|r| &r.bytecode.bytes).collect::<Vec<_>>(), recs.iter().map(|r| &r.bytecode.bytes).collect::<Vec<_>>());

        let odd = "{\"address\":\"0x01\",\"bytecode\":\"0x600\"}\n";
        assert!(matches!(parse_records(odd.as_bytes()), Err(PipelineError::MalformedRecord { line: 1, .. })));
        let dup = "{\"address\":\"0xab\",\"bytecode\":\"0x00\"}\n{\"address\":\"0xAB\",\"bytecode\":\"0x00\"}\n";
        assert!(matches!(parse_records(dup.as_bytes()), Err(PipelineError::DuplicateAddress { line: 2, .. })));
    }

    #[test]
    fn mode_names() {
        for m in [EvalMode::CcOnly, EvalMode::SdEasy, EvalMode::CcHard, EvalMode::SdCc] {
            assert_eq!(m.to_string().parse::<EvalMode>().unwrap(), m);
            assert_eq!(serde_json::to_value(m).unwrap(), serde_json::Value::String(m.to_string()));
        }
    }
}
