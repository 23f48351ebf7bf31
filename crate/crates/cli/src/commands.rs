use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use evmscan::cfg::{build_cfg, cfg_stats, to_dot, to_json, ControlFlowGraph};
use evmscan::disasm::{disassemble, parse_hex, strip_metadata, RawBytecode};
use evmscan::metrics::{self, AccuracyKind, ConfusionMatrix};
use evmscan::model::{
    enumerate_grid, load_encoder, load_model, prepare_example, save_encoder, save_model, train_model, Architecture,
    HyperGrid, TrainOptions, VulnerabilityModel,
};
use evmscan::n2v::{encode_contract_nodes, train_unsupervised, ContrastiveConfig, DanEncoder, TokenVocab};
use evmscan::nn::TrainConfig;
use evmscan::par::{self, Execution};
use evmscan::pipeline::{
    analyze_batch, evaluate, fetch_bytecode, index_file_name, ingest, model_file_name, route_by_size, split_dataset,
    write_records, AnalysisRow, AnalyzeConfig, ContractRecord, EvalMode, ModelSet, RpcConfig,
};
use evmscan::sc2v::SizeClass;
use evmscan::sibling::{find_contradictions, read_embeddings, sibling_lookup_batch, IndexEntry, SiblingConfig, TrainingIndex};

use crate::config::{self, FileConfig};
use crate::{input, Cli, Command, IndexAction};

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => config::load(path).map_err(input)?,
        None => FileConfig::default(),
    };
    let exec = if cli.sequential || file.sequential.unwrap_or(false) { Execution::Sequential } else { Execution::Parallel };
    match cli.command {
        Command::Disasm(a) => disasm(&a.input, a.sentence, a.strip_metadata || file.cfg.strip_metadata.unwrap_or(false)),
        Command::Cfg(a) => cfg(&a.input, a.dot, a.json, a.strip_metadata || file.cfg.strip_metadata.unwrap_or(false)),
        Command::Split(a) => split(&a.dataset, a.out_dir.or(file.split.out_dir)),
        Command::Train(a) => train(a, &file, exec),
        Command::Grid(a) => grid(a.list, a.count),
        Command::Embed(a) => {
            let model = a.model.or(file.embed.model).ok_or_else(|| input(anyhow!("--model is required")))?;
            embed(&a.dataset, &model, a.encoder.or(file.embed.encoder), a.out, exec)
        }
        Command::Index { action: IndexAction::Build(a) } => {
            let size = match (a.size, &file.index.size) {
                (Some(s), _) => Some(s),
                (None, Some(s)) => Some(s.parse().map_err(|e: String| input(anyhow!(e)))?),
                (None, None) => None,
            };
            index_build(&a.embeddings, &a.labels, size, a.out)
        }
        Command::Siblings(a) => {
            let defaults = SiblingConfig::default();
            let config = SiblingConfig {
                max_distance: a.max_distance.or(file.siblings.max_distance).unwrap_or(defaults.max_distance),
                step: a.step.or(file.siblings.step).unwrap_or(defaults.step),
            };
            siblings(&a.query, &a.index, &config, exec)
        }
        Command::Contradictions(a) => {
            let eps = a.eps.or(file.contradictions.eps).ok_or_else(|| input(anyhow!("--eps is required")))?;
            contradictions(&a.index, eps, exec)
        }
        Command::Analyze(a) => analyze(a, &file, exec),
        Command::Evaluate(a) => evaluate_cmd(a, &file, exec),
    }
}

fn stdout_or(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn emit<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

/// Hex on the command line, or a file holding hex text or raw bytes.
fn read_code(arg: &str) -> Result<RawBytecode> {
    let path = Path::new(arg);
    if path.is_file() {
        let bytes = std::fs::read(path).with_context(|| format!("reading {arg}")).map_err(input)?;
        if let Ok(text) = std::str::from_utf8(&bytes) {
            if let Ok(code) = parse_hex(text.trim()) {
                return Ok(code);
            }
        }
        return Ok(RawBytecode::new(bytes));
    }
    parse_hex(arg.trim()).with_context(|| format!("{arg:?} is neither a file nor hex bytecode")).map_err(input)
}

fn read_records(path: &Path) -> Result<Vec<ContractRecord>> {
    ingest(path).with_context(|| format!("reading {}", path.display())).map_err(input)
}

fn disasm(arg: &str, sentence: bool, strip: bool) -> Result<()> {
    let mut code = read_code(arg)?;
    if strip {
        code = strip_metadata(&code).0;
    }
    let listing = disassemble(&code);
    let mut out = stdout_or(None)?;
    if sentence {
        writeln!(out, "{}", listing.to_sentence())?;
    } else {
        write!(out, "{}", listing.to_text())?;
    }
    Ok(())
}

fn cfg(arg: &str, dot: bool, as_json: bool, strip: bool) -> Result<()> {
    let mut code = read_code(arg)?;
    if strip {
        code = strip_metadata(&code).0;
    }
    let graph = build_cfg(&disassemble(&code));
    let mut out = stdout_or(None)?;
    if dot {
        write!(out, "{}", to_dot(&graph))?;
    } else if as_json {
        serde_json::to_writer_pretty(&mut out, &to_json(&graph))?;
        writeln!(out)?;
    } else {
        let stats = cfg_stats(&graph);
        writeln!(out, "nodes {} edges {} worklist visits {}", stats.nodes, stats.edges, graph.iterations)?;
        for d in &graph.diagnostics {
            writeln!(out, "block {:#x}: {}", d.block, serde_json::to_string(&d.kind)?)?;
        }
    }
    Ok(())
}

fn split(dataset: &Path, out_dir: Option<PathBuf>) -> Result<()> {
    let records = read_records(dataset)?;
    let parts = split_dataset(&records);
    let dir = out_dir.unwrap_or_else(|| dataset.parent().map(Path::to_path_buf).unwrap_or_default());
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let stem = dataset.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    for (name, part) in [("train", &parts.train), ("valid", &parts.valid), ("test", &parts.test)] {
        let path = dir.join(format!("{stem}.{name}.jsonl"));
        write_records(BufWriter::new(File::create(&path)?), part)?;
        println!("{name}\t{}\t{}", part.len(), path.display());
    }
    Ok(())
}

fn grid(list: bool, count: bool) -> Result<()> {
    let points = enumerate_grid(&HyperGrid::default());
    if list && !count {
        let mut out = stdout_or(None)?;
        for p in &points {
            emit(&mut out, p)?;
        }
    } else {
        println!("{}", points.len());
    }
    Ok(())
}

fn cfg_of(record: &ContractRecord) -> ControlFlowGraph {
    build_cfg(&disassemble(&record.bytecode))
}

fn train(a: crate::TrainArgs, file: &FileConfig, exec: Execution) -> Result<()> {
    let t = &file.train;
    let out = a.out.or_else(|| t.out.clone()).unwrap_or_else(|| PathBuf::from("models"));
    let defaults = TrainConfig::default();
    let seed = a.seed.or(t.seed).unwrap_or(0);
    let config = TrainConfig {
        learning_rate: a.learning_rate.or(t.learning_rate).unwrap_or(defaults.learning_rate),
        batch_size: a.batch_size.or(t.batch_size).unwrap_or(defaults.batch_size),
        max_epochs: a.epochs.or(t.epochs).unwrap_or(defaults.max_epochs),
        patience: a.patience.or(t.patience).unwrap_or(defaults.patience),
        seed,
    };
    let records = read_records(&a.dataset)?;
    let parts = split_dataset(&records);
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let encoder_path = a.encoder.or_else(|| t.encoder.clone()).unwrap_or_else(|| out.join("encoder.dlva"));
    let (encoder, vocab) = if encoder_path.exists() {
        info!("using block encoder {}", encoder_path.display());
        load_encoder(&encoder_path).with_context(|| format!("loading {}", encoder_path.display())).map_err(input)?
    } else {
        info!("training block encoder on {} contracts", parts.train.len());
        let vocab = TokenVocab::standard();
        let cfgs: Vec<ControlFlowGraph> = par::map(exec, &parts.train, cfg_of);
        let mut n2v = ContrastiveConfig::default();
        n2v.train.seed = seed;
        let (encoder, history) = train_unsupervised(&cfgs, &vocab, &n2v)?;
        info!("encoder loss {:.4} -> {:?}", history.initial_loss, history.epoch_losses);
        save_encoder(&encoder, &vocab, &encoder_path)?;
        (encoder, vocab)
    };

    // Keep the records of the requested size class that carry this label.
    let select = |part: &[ContractRecord]| -> Vec<(ContractRecord, ControlFlowGraph)> {
        let kept: Vec<&ContractRecord> = part.iter().filter(|r| r.label(&a.vuln).is_some()).collect();
        if kept.len() < part.len() {
            warn!("{} records have no {} label and are skipped", part.len() - kept.len(), a.vuln);
        }
        par::map(exec, &kept, |r| {
            let listing = disassemble(&r.bytecode);
            (route_by_size(&listing).size_class == a.size).then(|| ((*r).clone(), build_cfg(&listing)))
        })
        .into_iter()
        .flatten()
        .collect()
    };
    let (train_set, valid_set, test_set) = (select(&parts.train), select(&parts.valid), select(&parts.test));
    if train_set.is_empty() {
        return Err(input(anyhow!("no {} training contracts labeled for {}", a.size, a.vuln)));
    }
    let examples = |set: &[(ContractRecord, ControlFlowGraph)]| {
        par::map(exec, set, |(r, g)| prepare_example(g, &encoder, &vocab, r.label(&a.vuln).unwrap_or(false)))
    };
    let (train_ex, valid_ex, test_ex) = (examples(&train_set), examples(&valid_set), examples(&test_set));
    info!("training on {} / validating on {} / testing on {}", train_ex.len(), valid_ex.len(), test_ex.len());
    let options = TrainOptions { execution: exec, ..TrainOptions::default() };
    let (model, history) =
        train_model(&train_ex, &valid_ex, &a.vuln, a.size, &config, &Architecture::preset(a.size), &options)?;
    let model_path = out.join(model_file_name(&a.vuln, a.size));
    save_model(&model, &model_path)?;
    println!(
        "saved {} ({} epochs, best epoch {}, validation loss {:.4})",
        model_path.display(),
        history.epochs.len(),
        history.best_epoch + 1,
        history.best_valid_loss
    );

    if a.write_index || t.write_index.unwrap_or(false) {
        let entries = par::map(exec, &train_set, |(r, g)| {
            let nodes = encode_contract_nodes(g, &encoder, &vocab);
            model.embed(g, &nodes).map(|vector| IndexEntry {
                id: r.address.clone(),
                label: r.label(&a.vuln).unwrap_or(false) as u8,
                vector,
            })
        });
        let entries = entries.into_iter().collect::<Result<Vec<_>, _>>()?;
        let mut index = TrainingIndex::from_entries(&a.vuln, model.embedding_dim(), entries)?;
        index.size_class = Some(a.size);
        let path = out.join(index_file_name(&a.vuln, a.size));
        index.save(&path)?;
        println!("saved {} ({} entries)", path.display(), index.len());
    }

    if !test_ex.is_empty() {
        let scored: Vec<(f64, bool)> = par::map(exec, &test_ex, |e| {
            let emb = model.sc2v.embed(&e.adj, &e.nodes).expect("shapes fixed by the model");
            (model.probability(&emb).expect("embedding width fixed by the model") as f64, e.label)
        });
        let mut cm = ConfusionMatrix::default();
        for &(p, truth) in &scored {
            cm.record(p >= options.threshold, truth);
        }
        let (scores, truth): (Vec<f64>, Vec<bool>) = scored.into_iter().unzip();
        let report = metrics::report(&cm, Some((&scores, &truth)));
        let kind = if a.size == SizeClass::Large { AccuracyKind::Balanced } else { AccuracyKind::Plain };
        print!("{}", metrics::render_table(&[(a.vuln.clone(), report)], kind));
    }
    Ok(())
}

fn model_encoder(model: &Path, encoder: Option<PathBuf>) -> Result<(DanEncoder, TokenVocab)> {
    let path = encoder.unwrap_or_else(|| model.with_file_name("encoder.dlva"));
    load_encoder(&path).with_context(|| format!("loading encoder {}", path.display())).map_err(input)
}

fn open_model(path: &Path) -> Result<VulnerabilityModel> {
    load_model(path).with_context(|| format!("loading model {}", path.display())).map_err(input)
}

fn embed(dataset: &Path, model_path: &Path, encoder: Option<PathBuf>, out: Option<PathBuf>, exec: Execution) -> Result<()> {
    let model = open_model(model_path)?;
    let (encoder, vocab) = model_encoder(model_path, encoder)?;
    let records = read_records(dataset)?;
    let rows = par::map(exec, &records, |r| {
        if r.bytecode.is_empty() {
            return Ok(None);
        }
        let g = cfg_of(r);
        let nodes = encode_contract_nodes(&g, &encoder, &vocab);
        model.embed(&g, &nodes).map(|vector| {
            Some(evmscan::sibling::EmbeddingRecord {
                address: r.address.clone(),
                vulnerability: model.vulnerability.clone(),
                vector,
            })
        })
    });
    let mut out = stdout_or(out.as_deref())?;
    let mut skipped = 0;
    for row in rows {
        match row? {
            Some(rec) => emit(&mut out, &rec)?,
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!("{skipped} records without code were skipped");
    }
    Ok(())
}

fn read_embedding_file(path: &Path) -> Result<Vec<evmscan::sibling::EmbeddingRecord>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display())).map_err(input)?;
    read_embeddings(BufReader::new(f)).with_context(|| format!("reading {}", path.display())).map_err(input)
}

fn load_index(path: &Path) -> Result<TrainingIndex> {
    TrainingIndex::load(path).with_context(|| format!("loading index {}", path.display())).map_err(input)
}

fn index_build(embeddings: &Path, labels: &Path, size: Option<SizeClass>, out: Option<PathBuf>) -> Result<()> {
    let rows = read_embedding_file(embeddings)?;
    let first = rows.first().ok_or_else(|| input(anyhow!("{} has no embeddings", embeddings.display())))?;
    let vulnerability = first.vulnerability.clone();
    let dimension = first.vector.len();
    let records = read_records(labels)?;
    let by_address: HashMap<String, &ContractRecord> =
        records.iter().map(|r| (r.address.to_ascii_lowercase(), r)).collect();
    let mut index = TrainingIndex::new(&vulnerability, dimension);
    index.size_class = size;
    for row in rows {
        if row.vulnerability != vulnerability {
            return Err(input(anyhow!("mixed vulnerabilities: {} and {}", vulnerability, row.vulnerability)));
        }
        let label = by_address
            .get(&row.address.to_ascii_lowercase())
            .and_then(|r| r.label(&vulnerability))
            .ok_or_else(|| input(anyhow!("no {vulnerability} label for {}", row.address)))?;
        index
            .push(IndexEntry { id: row.address, label: label as u8, vector: row.vector })
            .map_err(input)?;
    }
    let mut w = stdout_or(out.as_deref())?;
    index.write_jsonl(&mut w)?;
    w.flush()?;
    info!("{} entries for {vulnerability}", index.len());
    Ok(())
}

fn siblings(query: &Path, index: &Path, config: &SiblingConfig, exec: Execution) -> Result<()> {
    let queries = read_embedding_file(query)?;
    let index = load_index(index)?;
    let vectors: Vec<Vec<f32>> = queries.iter().map(|q| q.vector.clone()).collect();
    let verdicts = sibling_lookup_batch(&vectors, &index, config, exec).map_err(input)?;
    let mut out = stdout_or(None)?;
    for (q, v) in queries.iter().zip(verdicts) {
        emit(&mut out, &json!({ "address": q.address, "vulnerability": index.vulnerability, "verdict": v }))?;
    }
    Ok(())
}

fn contradictions(index: &Path, eps: f64, exec: Execution) -> Result<()> {
    if eps.is_nan() || eps < 0.0 {
        bail!(input(anyhow!("--eps must be a non-negative distance")));
    }
    let index = load_index(index)?;
    let pairs = find_contradictions(&index, eps, exec);
    let mut out = stdout_or(None)?;
    for p in &pairs {
        emit(&mut out, p)?;
    }
    out.flush()?;
    eprintln!("{} contradictory pairs within {eps} among {} entries", pairs.len(), index.len());
    Ok(())
}

fn load_models(models: Option<PathBuf>, indices: Option<PathBuf>) -> Result<ModelSet> {
    let dir = models.ok_or_else(|| input(anyhow!("--models is required")))?;
    ModelSet::load_dir(&dir, indices.as_deref())
        .with_context(|| format!("loading models from {}", dir.display()))
        .map_err(input)
}

fn sibling_config(max_distance: Option<f64>) -> SiblingConfig {
    let d = SiblingConfig::default();
    SiblingConfig { max_distance: max_distance.unwrap_or(d.max_distance), ..d }
}

fn analyze(a: crate::AnalyzeArgs, file: &FileConfig, exec: Execution) -> Result<()> {
    let f = &file.analyze;
    let set = load_models(a.models.or_else(|| f.models.clone()), a.indices.or_else(|| f.indices.clone()))?;
    let vulns = if a.vuln.is_empty() { f.vuln.clone() } else { Some(a.vuln) };
    let config = AnalyzeConfig {
        sibling: sibling_config(a.max_distance.or(f.max_distance)),
        use_sibling: !(a.no_siblings || f.no_siblings.unwrap_or(false)),
        vulnerabilities: vulns,
    };
    let records = match a.rpc.or_else(|| f.rpc.clone()) {
        Some(url) => {
            let mut rpc = RpcConfig::new(url);
            if let Some(s) = a.timeout_secs.or(f.timeout_secs) {
                rpc.timeout = Duration::from_secs_f64(s);
            }
            let code = fetch_bytecode(&rpc, &a.target)
                .with_context(|| format!("fetching code of {}", a.target))
                .map_err(input)?;
            vec![ContractRecord::new(a.target.clone(), code)]
        }
        None => read_records(Path::new(&a.target))?,
    };
    let rows = analyze_batch(&records, &set, &config, exec);
    let mut out = stdout_or(a.out.as_deref())?;
    let mut failed = 0;
    for row in &rows {
        if let AnalysisRow::Failed { address, error } = row {
            warn!("{address}: {error}");
            failed += 1;
        }
        emit(&mut out, row)?;
    }
    out.flush()?;
    info!("{} contracts analyzed, {failed} failed", rows.len() - failed);
    Ok(())
}

fn evaluate_cmd(a: crate::EvaluateArgs, file: &FileConfig, exec: Execution) -> Result<()> {
    let f = &file.evaluate;
    let mode: EvalMode = match (a.mode, &f.mode) {
        (Some(m), _) => m,
        (None, Some(m)) => m.parse().map_err(|e: String| input(anyhow!(e)))?,
        (None, None) => return Err(input(anyhow!("--mode is required"))),
    };
    let set = load_models(a.models.or_else(|| f.models.clone()), a.indices.or_else(|| f.indices.clone()))?;
    let mut records = read_records(&a.dataset)?;
    if a.test_split || f.test_split.unwrap_or(false) {
        records = split_dataset(&records).test;
    }
    let vulns = if a.vuln.is_empty() { f.vuln.clone() } else { Some(a.vuln) };
    let config =
        AnalyzeConfig { sibling: sibling_config(a.max_distance.or(f.max_distance)), use_sibling: true, vulnerabilities: vulns };
    let report = evaluate(&records, &set, &config, mode, exec).map_err(input)?;
    for (address, error) in &report.failed {
        warn!("{address}: {error}");
    }
    if a.json || f.json.unwrap_or(false) {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("mode {mode}, {} contracts", records.len());
        print!("{}", report.to_table());
    }
    Ok(())
}
