mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::time::Duration;

use evmscan::cfg::build_cfg;
use evmscan::disasm::{disassemble, RawBytecode};
use evmscan::model::{save_encoder, save_model, Architecture, VulnerabilityModel};
use evmscan::n2v::{encode_contract_nodes, DanEncoder, TokenVocab};
use evmscan::nn::RngStream;
use evmscan::par::Execution;
use evmscan::pipeline::{
    analyze, analyze_batch, evaluate, fetch_bytecode, index_file_name, ingest, model_file_name, parse_records,
    write_records, AnalysisRow, AnalyzeConfig, ContractRecord, EvalMode, ModelSet, PipelineError, Provenance,
    RpcConfig, Verdict,
};
use evmscan::sc2v::SizeClass;
use evmscan::sibling::{IndexEntry, SiblingConfig, TrainingIndex};
use evmscan::synth::{generate_contract, synthetic_address, SynthConfig};

const VULN: &str = "reentrancy-eth";

fn model_set(seed: u64) -> ModelSet {
    let vocab = TokenVocab::standard();
    let mut rng = RngStream::new(seed);
    let mut set = ModelSet::new(DanEncoder::new(vocab.len(), &mut rng), vocab);
    for (i, size) in [SizeClass::Large, SizeClass::Small].into_iter().enumerate() {
        set.insert_model(VulnerabilityModel::new(VULN, size, &Architecture::preset(size), seed + i as u64).unwrap());
    }
    set
}

fn contract(i: usize, instructions: Option<usize>, rng: &mut RngStream) -> ContractRecord {
    let config = instructions.map_or_else(SynthConfig::small, SynthConfig::sized);
    let vulnerable = i.is_multiple_of(3);
    ContractRecord::new(synthetic_address(i), RawBytecode::new(generate_contract(&config, vulnerable, rng)))
        .with_label(VULN, vulnerable)
}

fn embedding(set: &ModelSet, record: &ContractRecord, size: SizeClass) -> Vec<f32> {
    let cfg = build_cfg(&disassemble(&record.bytecode));
    let nodes = encode_contract_nodes(&cfg, &set.encoder, &set.vocab);
    set.model(VULN, size).unwrap().embed(&cfg, &nodes).unwrap()
}

fn index_of(set: &ModelSet, records: &[&ContractRecord], size: SizeClass) -> TrainingIndex {
    let entries: Vec<IndexEntry> = records
        .iter()
        .map(|r| IndexEntry { id: r.address.clone(), label: r.label(VULN).unwrap() as u8, vector: embedding(set, r, size) })
        .collect();
    let mut index = TrainingIndex::from_entries(VULN, entries[0].vector.len(), entries).unwrap();
    index.size_class = Some(size);
    index
}

/// Untrained models put distinct contracts a few hundredths apart, inside
/// the default radius, so the tests use a radius only exact matches meet.
fn only_vuln() -> AnalyzeConfig {
    AnalyzeConfig {
        vulnerabilities: Some(vec![VULN.to_string()]),
        sibling: SiblingConfig { max_distance: 1e-4, ..SiblingConfig::default() },
        ..AnalyzeConfig::default()
    }
}

fn without_timing(rows: &[AnalysisRow]) -> Vec<AnalysisRow> {
    rows.iter()
        .cloned()
        .map(|mut r| {
            if let AnalysisRow::Report(rep) = &mut r {
                rep.elapsed_secs = 0.0;
            }
            r
        })
        .collect()
}

#[test]
fn records_round_trip_and_bad_input_is_located() {
    let mut rng = RngStream::new(1);
    let records: Vec<ContractRecord> = (0..5).map(|i| contract(i, None, &mut rng)).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    write_records(std::fs::File::create(&path).unwrap(), &records).unwrap();
    assert_eq!(ingest(&path).unwrap(), records);

    let dup = "{\"address\":\"0xAB\",\"bytecode\":\"0x00\"}\n\n{\"address\":\"0xab\",\"bytecode\":\"00\"}\n";
    assert!(matches!(parse_records(dup.as_bytes()), Err(PipelineError::DuplicateAddress { line: 3, .. })));
    let bad_hex = "{\"address\":\"0x1\",\"bytecode\":\"0xzz\"}\n";
    assert!(matches!(parse_records(bad_hex.as_bytes()), Err(PipelineError::MalformedRecord { line: 1, .. })));
    let bad_label = "{\"address\":\"0x1\",\"bytecode\":\"0x00\",\"labels\":{\"x\":2}}\n";
    assert!(matches!(parse_records(bad_label.as_bytes()), Err(PipelineError::MalformedRecord { line: 1, .. })));
    assert!(matches!(ingest(&dir.path().join("absent")), Err(PipelineError::Io(_))));
}

#[test]
fn large_contracts_take_the_sibling_answer_when_one_exists() {
    let mut set = model_set(7);
    let mut rng = RngStream::new(2);
    let known = contract(0, Some(1000), &mut rng);
    let unknown = contract(1, Some(1000), &mut rng);
    let index = index_of(&set, &[&known], SizeClass::Large);
    set.insert_index(index);
    // Precondition for the second case: no sibling within the radius.
    let far = common::dist(&embedding(&set, &known, SizeClass::Large), &embedding(&set, &unknown, SizeClass::Large));
    assert!(far > only_vuln().sibling.max_distance, "synthetic contracts embed {far} apart");

    let rep = analyze(&known, &set, &only_vuln()).unwrap();
    assert_eq!(rep.size_class, SizeClass::Large);
    let r = &rep.results[0];
    assert_eq!(r.verdict, Verdict::Vulnerable, "known contract carries its own label");
    assert_eq!(r.provenance, Some(Provenance::Sd));
    assert_eq!(r.probability, None);

    let rep = analyze(&unknown, &set, &only_vuln()).unwrap();
    let r = &rep.results[0];
    assert_eq!(r.provenance, Some(Provenance::Cc));
    assert!(r.probability.is_some());
    assert!(!r.sibling.as_ref().unwrap().is_known());

    // Turning siblings off forces the classifier.
    let cfg = AnalyzeConfig { use_sibling: false, ..only_vuln() };
    assert_eq!(analyze(&known, &set, &cfg).unwrap().results[0].provenance, Some(Provenance::Cc));
}

#[test]
fn small_contracts_always_use_the_classifier() {
    let mut set = model_set(8);
    let mut rng = RngStream::new(3);
    let small = contract(0, None, &mut rng);
    // Even a perfect sibling match in a small-class index is ignored.
    let index = index_of(&set, &[&small], SizeClass::Small);
    set.insert_index(index);
    let rep = analyze(&small, &set, &only_vuln()).unwrap();
    assert_eq!(rep.size_class, SizeClass::Small);
    assert_eq!(rep.results[0].provenance, Some(Provenance::Cc));
    assert!(rep.results[0].sibling.is_none());
}

#[test]
fn default_list_marks_missing_models_unsupported() {
    let set = model_set(9);
    let mut rng = RngStream::new(4);
    let rep = analyze(&contract(0, None, &mut rng), &set, &AnalyzeConfig::default()).unwrap();
    assert_eq!(rep.results.len(), evmscan::pipeline::SMALL_VULNERABILITIES.len());
    for r in &rep.results {
        if r.vulnerability == VULN {
            assert_ne!(r.verdict, Verdict::Unsupported);
        } else {
            assert_eq!(r.verdict, Verdict::Unsupported);
            assert_eq!(r.provenance, None);
        }
    }
}

#[test]
fn batch_isolates_failures_and_keeps_order() {
    let set = model_set(10);
    let mut rng = RngStream::new(5);
    let mut records: Vec<ContractRecord> = (0..6).map(|i| contract(i, None, &mut rng)).collect();
    records.insert(2, ContractRecord::new("0xempty", RawBytecode::new(vec![])));
    let rows = analyze_batch(&records, &set, &only_vuln(), Execution::Parallel);
    let addresses: Vec<&str> = rows.iter().map(AnalysisRow::address).collect();
    let expected: Vec<&str> = records.iter().map(|r| r.address.as_str()).collect();
    assert_eq!(addresses, expected);
    assert!(matches!(&rows[2], AnalysisRow::Failed { error, .. } if error.contains("no code")));
    assert_eq!(rows.iter().filter(|r| r.report().is_some()).count(), 6);

    let seq = analyze_batch(&records, &set, &only_vuln(), Execution::Sequential);
    assert_eq!(without_timing(&rows), without_timing(&seq));
}

#[test]
fn evaluation_modes_partition_the_test_set() {
    let mut set = model_set(11);
    let mut rng = RngStream::new(6);
    let records: Vec<ContractRecord> = (0..18).map(|i| contract(i, Some(900), &mut rng)).collect();
    // Siblings know every other contract.
    let known: Vec<&ContractRecord> = records.iter().step_by(2).collect();
    let index = index_of(&set, &known, SizeClass::Large);
    set.insert_index(index);
    let config = only_vuln();
    let run = |mode| evaluate(&records, &set, &config, mode, Execution::Parallel).unwrap().rows.remove(0).report;
    let (cc, easy, hard, both) = (run(EvalMode::CcOnly), run(EvalMode::SdEasy), run(EvalMode::CcHard), run(EvalMode::SdCc));
    assert_eq!(cc.test_size, 18);
    assert_eq!(easy.test_size, 9);
    assert_eq!(easy.accuracy, Some(1.0), "exact matches vote their own label");
    assert_eq!(easy.test_size + hard.test_size, 18);
    assert_eq!(easy.confusion.merge(&hard.confusion), both.confusion);
    assert!(cc.auc.is_some() && hard.auc.is_some());
    assert!(easy.auc.is_none() && both.auc.is_none());
}

#[test]
fn full_sibling_coverage_leaves_nothing_for_the_classifier() {
    let mut set = model_set(13);
    let mut rng = RngStream::new(8);
    let records: Vec<ContractRecord> = (0..9).map(|i| contract(i, Some(900), &mut rng)).collect();
    let all: Vec<&ContractRecord> = records.iter().collect();
    set.insert_index(index_of(&set, &all, SizeClass::Large));
    let config = only_vuln();
    let run = |mode| evaluate(&records, &set, &config, mode, Execution::Sequential).unwrap().rows.remove(0).report;
    let (easy, hard, both) = (run(EvalMode::SdEasy), run(EvalMode::CcHard), run(EvalMode::SdCc));
    assert_eq!(hard.test_size, 0);
    assert_eq!(easy.confusion, both.confusion);
    assert_eq!(both.accuracy, Some(1.0));
}

#[test]
fn evaluation_without_siblings_degenerates_to_the_classifier() {
    let set = model_set(12);
    let mut rng = RngStream::new(7);
    let mut records: Vec<ContractRecord> = (0..8).map(|i| contract(i, None, &mut rng)).collect();
    records.push(ContractRecord::new("0xdead", RawBytecode::new(vec![])).with_label(VULN, true));
    let config = only_vuln();
    let cc = evaluate(&records, &set, &config, EvalMode::CcOnly, Execution::Sequential).unwrap();
    let both = evaluate(&records, &set, &config, EvalMode::SdCc, Execution::Sequential).unwrap();
    let easy = evaluate(&records, &set, &config, EvalMode::SdEasy, Execution::Sequential).unwrap();
    assert_eq!(cc.rows[0].report.confusion, both.rows[0].report.confusion);
    assert_eq!(easy.rows[0].report.test_size, 0);
    assert_eq!(easy.rows[0].report.accuracy, None);
    assert_eq!(cc.failed.len(), 1);
    assert_eq!(cc.rows[0].report.test_size, 8);
    assert!(cc.to_table().contains(VULN));

    let unlabeled = vec![ContractRecord::new("0x1", RawBytecode::new(vec![0x00]))];
    assert!(matches!(
        evaluate(&unlabeled, &set, &config, EvalMode::CcOnly, Execution::Sequential),
        Err(PipelineError::MissingLabels { .. })
    ));
}

#[test]
fn saved_model_directory_reproduces_in_memory_results() {
    let mut set = model_set(13);
    let mut rng = RngStream::new(8);
    let records: Vec<ContractRecord> = (0..4).map(|i| contract(i, Some(800), &mut rng)).collect();
    let index = index_of(&set, &[&records[0]], SizeClass::Large);
    set.insert_index(index);

    let dir = tempfile::tempdir().unwrap();
    let (models, indices) = (dir.path().join("models"), dir.path().join("indices"));
    std::fs::create_dir_all(&models).unwrap();
    std::fs::create_dir_all(&indices).unwrap();
    assert!(matches!(ModelSet::load_dir(&models, None), Err(PipelineError::MissingEncoder(_))));
    save_encoder(&set.encoder, &set.vocab, &models.join("encoder.dlva")).unwrap();
    for ((v, size), m) in &set.models {
        save_model(m, &models.join(model_file_name(v, *size))).unwrap();
    }
    for ((v, size), idx) in &set.indices {
        idx.save(&indices.join(index_file_name(v, *size))).unwrap();
    }
    let loaded = ModelSet::load_dir(&models, Some(&indices)).unwrap();
    assert_eq!(loaded.vulnerabilities(), vec![VULN.to_string()]);
    let a = analyze_batch(&records, &set, &only_vuln(), Execution::Parallel);
    let b = analyze_batch(&records, &loaded, &only_vuln(), Execution::Parallel);
    assert_eq!(without_timing(&a), without_timing(&b));
    assert_eq!(b[0].report().unwrap().results[0].provenance, Some(Provenance::Sd));
}

/// Serves one HTTP exchange with `reply` as the JSON body and hands back the
/// request body it received.
fn mock_rpc(reply: &'static str) -> (String, std::thread::JoinHandle<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut length = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if line.trim().is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                length = v.trim().parse().unwrap();
            }
        }
        let mut body = vec![0; length];
        reader.read_exact(&mut body).unwrap();
        let mut stream = stream;
        write!(stream, "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}", reply.len())
            .unwrap();
        String::from_utf8(body).unwrap()
    });
    (url, handle)
}

#[test]
fn rpc_fetches_code_with_eth_get_code() {
    let (url, server) = mock_rpc(r#"{"jsonrpc":"2.0","id":1,"result":"0x6080604052"}"#);
    let code = fetch_bytecode(&RpcConfig::new(url), "0x00000000000000000000000000000000000000aa").unwrap();
    assert_eq!(code.bytes, vec![0x60, 0x80, 0x60, 0x40, 0x52]);
    let request: serde_json::Value = serde_json::from_str(&server.join().unwrap()).unwrap();
    assert_eq!(request["method"], "eth_getCode");
    assert_eq!(request["params"], serde_json::json!(["0x00000000000000000000000000000000000000aa", "latest"]));
}

#[test]
fn rpc_failures_are_classified() {
    let (url, server) = mock_rpc(r#"{"jsonrpc":"2.0","id":1,"result":"0x"}"#);
    assert!(matches!(fetch_bytecode(&RpcConfig::new(url), "0x1"), Err(PipelineError::EmptyCode)));
    server.join().unwrap();

    let (url, server) = mock_rpc(r#"{"jsonrpc":"2.0","id":1,"error":{"code":-32000,"message":"boom"}}"#);
    assert!(matches!(fetch_bytecode(&RpcConfig::new(url), "0x1"), Err(PipelineError::Rpc(m)) if m.contains("boom")));
    server.join().unwrap();

    // Nothing listening.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let closed = RpcConfig::new(format!("http://127.0.0.1:{port}"));
    assert!(matches!(fetch_bytecode(&closed, "0x1"), Err(PipelineError::Rpc(_))));

    // Accepts but never answers.
    let silent = TcpListener::bind("127.0.0.1:0").unwrap();
    let rpc = RpcConfig { url: format!("http://{}", silent.local_addr().unwrap()), timeout: Duration::from_millis(300) };
    assert!(matches!(fetch_bytecode(&rpc, "0x1"), Err(PipelineError::Timeout)));
    drop(silent);
}
