//! Node to Vector: a deep-averaging encoder that maps each basic block's
//! opcode sentence to a unit-length 512-vector, trained without labels by
//! contrasting CFG-adjacent blocks against random ones.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use thiserror::Error;

use crate::cfg::{BasicBlock, BlockId, ControlFlowGraph};
use crate::disasm::{Instruction, OPCODES};
use crate::nn::{tanh, tanh_backward, Adam, Dense, Parameter, RngStream, Scalar, Tensor, TrainConfig};

/// Output width of the encoder.
pub const NODE_DIM: usize = 512;
/// Width of the averaged token embedding.
pub const EMBED_DIM: usize = 128;

#[derive(Debug, Error)]
pub enum N2vError {
    #[error("empty corpus: {0}")]
    EmptyCorpus(String),
    #[error("bad vocabulary: {0}")]
    BadVocab(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Dense token ids: `PAD`, `UNK`, every mnemonic, `IMM_00..IMM_FF`, then
/// `PUSHDATA_2..PUSHDATA_32`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenVocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl TokenVocab {
    pub const PAD: &'static str = "PAD";
    pub const UNK: &'static str = "UNK";

    pub fn standard() -> Self {
        let mut tokens = vec![Self::PAD.to_string(), Self::UNK.to_string()];
        tokens.extend(OPCODES.iter().map(|op| op.mnemonic.to_string()));
        tokens.extend((0..=255u8).map(|b| format!("IMM_{b:02X}")));
        tokens.extend((2..=32).map(|n| format!("PUSHDATA_{n}")));
        Self::from_tokens(tokens).expect("standard vocabulary is well formed")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, N2vError> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(N2vError::BadVocab(format!("duplicate token {t:?}")));
            }
        }
        if !ids.contains_key(Self::UNK) {
            return Err(N2vError::BadVocab("missing UNK".into()));
        }
        Ok(TokenVocab { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    /// Id of a token; anything unseen maps to `UNK`.
    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or_else(|| self.ids[Self::UNK])
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self, N2vError> {
        Self::from_tokens(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), N2vError> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self, N2vError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn encode_block(&self, block: &BasicBlock) -> Vec<u32> {
        tokenize_instructions(&block.instructions).iter().map(|t| self.id(t)).collect()
    }
}

impl Default for TokenVocab {
    fn default() -> Self {
        Self::standard()
    }
}

pub fn tokenize_instructions(instructions: &[Instruction]) -> Vec<String> {
    let mut out = Vec::with_capacity(instructions.len() * 2);
    for ins in instructions {
        if ins.flags.unknown_opcode {
            out.push(TokenVocab::UNK.to_string());
            continue;
        }
        out.push(ins.mnemonic().to_string());
        match ins.immediate.len() {
            0 => {}
            1 => out.push(format!("IMM_{:02X}", ins.immediate[0])),
            n => out.push(format!("PUSHDATA_{n}")),
        }
    }
    out
}

pub fn tokenize_block(block: &BasicBlock) -> Vec<String> {
    tokenize_instructions(&block.instructions)
}

/// Token-average → tanh(512) → tanh(512) → L2 normalize.
#[derive(Debug, Clone, PartialEq)]
pub struct DanEncoder<T = f32> {
    pub embedding: Parameter<T>,
    pub hidden1: Dense<T>,
    pub hidden2: Dense<T>,
}

struct DanCache<T> {
    x: Tensor<T>,
    h1: Tensor<T>,
    h2: Tensor<T>,
    norms: Vec<T>,
}

impl<T: Scalar> DanEncoder<T> {
    pub fn new(vocab_size: usize, rng: &mut RngStream) -> Self {
        let embedding = Parameter::glorot(&[vocab_size, EMBED_DIM], vocab_size, EMBED_DIM, rng);
        let mut hidden1 = Dense::new(EMBED_DIM, NODE_DIM, rng);
        let mut hidden2 = Dense::new(NODE_DIM, NODE_DIM, rng);
        // Nonzero biases keep the empty block's output away from the origin,
        // where normalization is undefined.
        for b in hidden1.b.value.data_mut().iter_mut().chain(hidden2.b.value.data_mut()) {
            *b = T::from_f64(rng.uniform(-0.1, 0.1));
        }
        DanEncoder { embedding, hidden1, hidden2 }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.shape()[0]
    }

    fn mean_embed(&self, blocks: &[&[u32]]) -> Tensor<T> {
        let mut x = Tensor::zeros(&[blocks.len(), EMBED_DIM]);
        let table = self.embedding.value.data();
        let vocab = self.vocab_size();
        for (r, ids) in blocks.iter().enumerate() {
            if ids.is_empty() {
                continue;
            }
            let row = x.row_mut(r);
            for &id in ids.iter() {
                let id = (id as usize).min(vocab - 1);
                for (v, &e) in row.iter_mut().zip(&table[id * EMBED_DIM..(id + 1) * EMBED_DIM]) {
                    *v += e;
                }
            }
            let inv = T::one() / T::from_f64(ids.len() as f64);
            row.iter_mut().for_each(|v| *v *= inv);
        }
        x
    }

    fn forward_cached(&self, blocks: &[&[u32]]) -> (Tensor<T>, DanCache<T>) {
        let x = self.mean_embed(blocks);
        let h1 = tanh(&self.hidden1.forward(&x).expect("embedding width"));
        let h2 = tanh(&self.hidden2.forward(&h1).expect("hidden width"));
        let mut z = h2.clone();
        let mut norms = Vec::with_capacity(blocks.len());
        for r in 0..z.rows() {
            let row = z.row_mut(r);
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if norm > T::zero() {
                row.iter_mut().for_each(|v| *v = *v / norm);
            } else {
                row[0] = T::one();
            }
            norms.push(norm);
        }
        (z, DanCache { x, h1, h2, norms })
    }

    /// Unit-length rows, one per block.
    pub fn encode_batch(&self, blocks: &[&[u32]]) -> Tensor<T> {
        self.forward_cached(blocks).0
    }

    /// Accumulate into each parameter's `grad` the gradient of
    /// `Σ z ⊙ dz`, where `z = encode_batch(blocks)`.
    pub fn accumulate_grad(&mut self, blocks: &[&[u32]], dz: &Tensor<T>) {
        let (z, cache) = self.forward_cached(blocks);
        self.backward(blocks, &cache, &z, dz);
    }

    pub fn encode_block(&self, ids: &[u32]) -> Vec<T> {
        self.encode_batch(&[ids]).into_data()
    }

    /// Backpropagate a gradient w.r.t. the normalized outputs into every
    /// parameter's `grad`.
    fn backward(&mut self, blocks: &[&[u32]], cache: &DanCache<T>, z: &Tensor<T>, dz: &Tensor<T>) {
        let mut dh2 = Tensor::zeros(dz.shape());
        for r in 0..dz.rows() {
            let norm = cache.norms[r];
            if norm == T::zero() {
                continue;
            }
            let (zr, dzr) = (z.row(r), dz.row(r));
            let dot: T = zr.iter().zip(dzr).map(|(&a, &b)| a * b).sum();
            for ((o, &zv), &dv) in dh2.row_mut(r).iter_mut().zip(zr).zip(dzr) {
                *o = (dv - zv * dot) / norm;
            }
        }
        let dpre2 = tanh_backward(&cache.h2, &dh2);
        let dh1 = self.hidden2.backward(&cache.h1, &dpre2);
        let dpre1 = tanh_backward(&cache.h1, &dh1);
        let dx = self.hidden1.backward(&cache.x, &dpre1);
        let vocab = self.vocab_size();
        let grad = self.embedding.grad.data_mut();
        for (r, ids) in blocks.iter().enumerate() {
            if ids.is_empty() {
                continue;
            }
            let inv = T::one() / T::from_f64(ids.len() as f64);
            for &id in ids.iter() {
                let id = (id as usize).min(vocab - 1);
                for (g, &d) in grad[id * EMBED_DIM..(id + 1) * EMBED_DIM].iter_mut().zip(dx.row(r)) {
                    *g += d * inv;
                }
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut p = vec![&mut self.embedding];
        p.extend(self.hidden1.params_mut());
        p.extend(self.hidden2.params_mut());
        p
    }

    pub fn cast<U: Scalar>(&self) -> DanEncoder<U> {
        DanEncoder { embedding: self.embedding.cast(), hidden1: self.hidden1.cast(), hidden2: self.hidden2.cast() }
    }

    /// Named tensors for the model container.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("n2v.embedding".into(), &self.embedding.value),
            ("n2v.hidden1.w".into(), &self.hidden1.w.value),
            ("n2v.hidden1.b".into(), &self.hidden1.b.value),
            ("n2v.hidden2.w".into(), &self.hidden2.w.value),
            ("n2v.hidden2.b".into(), &self.hidden2.b.value),
        ]
    }

    pub fn from_named_tensors(mut lookup: impl FnMut(&str) -> Option<Tensor<T>>) -> Option<Self> {
        let mut take = |name: &str| lookup(name).map(Parameter::new);
        Some(DanEncoder {
            embedding: take("n2v.embedding")?,
            hidden1: Dense { w: take("n2v.hidden1.w")?, b: take("n2v.hidden1.b")? },
            hidden2: Dense { w: take("n2v.hidden2.w")?, b: take("n2v.hidden2.b")? },
        })
    }
}

/// One 512-vector per CFG node, in node order.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddingMatrix {
    pub block_ids: Vec<BlockId>,
    pub rows: Tensor<f32>,
}

impl NodeEmbeddingMatrix {
    pub fn len(&self) -> usize {
        self.block_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.block_ids.is_empty()
    }
}

pub fn encode_contract_nodes(cfg: &ControlFlowGraph, encoder: &DanEncoder, vocab: &TokenVocab) -> NodeEmbeddingMatrix {
    let ids: Vec<Vec<u32>> = cfg.nodes.iter().map(|b| vocab.encode_block(b)).collect();
    let refs: Vec<&[u32]> = ids.iter().map(Vec::as_slice).collect();
    let rows = if refs.is_empty() { Tensor::zeros(&[0, NODE_DIM]) } else { encoder.encode_batch(&refs) };
    NodeEmbeddingMatrix { block_ids: cfg.nodes.iter().map(|b| b.id).collect(), rows }
}

/// Settings for the unsupervised objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveConfig {
    pub train: TrainConfig,
    /// Random blocks contrasted against each positive.
    pub negatives: usize,
    /// Softmax temperature applied to cosine scores.
    pub temperature: f64,
    /// Cap on anchor pairs drawn per epoch (0 = all pairs).
    pub anchors_per_epoch: usize,
    /// Fixed pairs used to report loss before and after each epoch.
    pub eval_pairs: usize,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            train: TrainConfig { learning_rate: 1e-3, batch_size: 64, max_epochs: 3, ..TrainConfig::default() },
            negatives: 8,
            temperature: 0.1,
            anchors_per_epoch: 4096,
            eval_pairs: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderHistory {
    /// Loss on the fixed evaluation sample before any update.
    pub initial_loss: f64,
    /// Same sample, after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Distinct block sentences plus the undirected adjacency between them.
#[derive(Debug, Clone)]
pub struct BlockCorpus {
    pub sentences: Vec<Vec<u32>>,
    pub pairs: Vec<(usize, usize)>,
}

impl BlockCorpus {
    pub fn build(cfgs: &[ControlFlowGraph], vocab: &TokenVocab) -> Self {
        let mut index: HashMap<Vec<u32>, usize> = HashMap::new();
        let mut sentences = Vec::new();
        let mut pairs = BTreeSet::new();
        for cfg in cfgs {
            let local: Vec<usize> = cfg
                .nodes
                .iter()
                .map(|b| {
                    let ids = vocab.encode_block(b);
                    *index.entry(ids.clone()).or_insert_with(|| {
                        sentences.push(ids);
                        sentences.len() - 1
                    })
                })
                .collect();
            for (a, b) in cfg.index_edges() {
                let (x, y) = (local[a], local[b]);
                if x != y {
                    pairs.insert((x.min(y), x.max(y)));
                }
            }
        }
        BlockCorpus { sentences, pairs: pairs.into_iter().collect() }
    }
}

struct Triple {
    anchor: usize,
    positive: usize,
    negatives: Vec<usize>,
}

fn sample_triple(corpus: &BlockCorpus, pair: (usize, usize), m: usize, rng: &mut RngStream) -> Triple {
    let (anchor, positive) = if rng.bernoulli(0.5) { pair } else { (pair.1, pair.0) };
    let n = corpus.sentences.len();
    let negatives = (0..m)
        .map(|_| loop {
            let j = rng.index(n);
            if n <= 2 || (j != anchor && j != positive) {
                break j;
            }
        })
        .collect();
    Triple { anchor, positive, negatives }
}

/// Mean softmax cross-entropy over a batch; fills `dz` (indexed like
/// `rows`) when given.
fn contrastive_loss<T: Scalar>(z: &Tensor<T>, slots: &[(usize, usize, Vec<usize>)], tau: f64, mut dz: Option<&mut Tensor<T>>) -> f64 {
    let mut total = 0.0;
    let scale = 1.0 / slots.len() as f64;
    for (a, p, negs) in slots {
        let za = z.row(*a);
        let cands: Vec<usize> = std::iter::once(*p).chain(negs.iter().copied()).collect();
        let scores: Vec<f64> =
            cands.iter().map(|&c| za.iter().zip(z.row(c)).map(|(&x, &y)| (x * y).as_f64()).sum::<f64>() / tau).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
        total += -(scores[0] - max - sum.ln());
        if let Some(dz) = dz.as_deref_mut() {
            for (j, &c) in cands.iter().enumerate() {
                let g = (((scores[j] - max).exp() / sum) - if j == 0 { 1.0 } else { 0.0 }) * scale / tau;
                if g == 0.0 {
                    continue;
                }
                let gt = T::from_f64(g);
                for d in 0..z.cols() {
                    let (zc, zav) = (z.row(c)[d], z.row(*a)[d]);
                    dz.row_mut(*a)[d] += gt * zc;
                    dz.row_mut(c)[d] += gt * zav;
                }
            }
        }
    }
    total * scale
}

/// Gather the distinct blocks a batch touches so each is encoded once.
fn batch_slots(triples: &[Triple]) -> (Vec<usize>, Vec<(usize, usize, Vec<usize>)>) {
    let mut order = Vec::new();
    let mut pos = HashMap::new();
    let mut slot = |i: usize| {
        *pos.entry(i).or_insert_with(|| {
            order.push(i);
            order.len() - 1
        })
    };
    let slots =
        triples.iter().map(|t| (slot(t.anchor), slot(t.positive), t.negatives.iter().map(|&n| slot(n)).collect())).collect();
    (order, slots)
}

fn batch_loss<T: Scalar>(encoder: &DanEncoder<T>, corpus: &BlockCorpus, triples: &[Triple], tau: f64) -> f64 {
    let (order, slots) = batch_slots(triples);
    let blocks: Vec<&[u32]> = order.iter().map(|&i| corpus.sentences[i].as_slice()).collect();
    let z = encoder.encode_batch(&blocks);
    contrastive_loss(&z, &slots, tau, None)
}

fn batch_gradient<T: Scalar>(encoder: &mut DanEncoder<T>, corpus: &BlockCorpus, triples: &[Triple], tau: f64) -> f64 {
    let (order, slots) = batch_slots(triples);
    let blocks: Vec<&[u32]> = order.iter().map(|&i| corpus.sentences[i].as_slice()).collect();
    let (z, cache) = encoder.forward_cached(&blocks);
    let mut dz = Tensor::zeros(z.shape());
    let loss = contrastive_loss(&z, &slots, tau, Some(&mut dz));
    encoder.backward(&blocks, &cache, &z, &dz);
    loss
}

/// Train an encoder on the blocks of `corpus`.
pub fn train_unsupervised(
    corpus: &[ControlFlowGraph],
    vocab: &TokenVocab,
    config: &ContrastiveConfig,
) -> Result<(DanEncoder, EncoderHistory), N2vError> {
    let blocks = BlockCorpus::build(corpus, vocab);
    train_on_blocks(&blocks, vocab.len(), config)
}

pub fn train_on_blocks(
    corpus: &BlockCorpus,
    vocab_size: usize,
    config: &ContrastiveConfig,
) -> Result<(DanEncoder, EncoderHistory), N2vError> {
    if corpus.sentences.is_empty() {
        return Err(N2vError::EmptyCorpus("no basic blocks".into()));
    }
    if corpus.pairs.is_empty() {
        return Err(N2vError::EmptyCorpus("no CFG-adjacent block pairs".into()));
    }
    let root = RngStream::new(config.train.seed);
    let mut encoder = DanEncoder::<f32>::new(vocab_size, &mut root.split(1));
    let mut eval_rng = root.split(2);
    let eval: Vec<Triple> = (0..config.eval_pairs.max(1))
        .map(|_| {
            let pair = corpus.pairs[eval_rng.index(corpus.pairs.len())];
            sample_triple(corpus, pair, config.negatives, &mut eval_rng)
        })
        .collect();
    let tau = config.temperature;
    let initial_loss = batch_loss(&encoder, corpus, &eval, tau);
    let mut adam = Adam::new(config.train.learning_rate);
    let mut rng = root.split(3);
    let mut epoch_losses = Vec::new();
    let batch = config.train.batch_size.max(1);
    for _ in 0..config.train.max_epochs {
        let mut order: Vec<usize> = (0..corpus.pairs.len()).collect();
        rng.shuffle(&mut order);
        if config.anchors_per_epoch > 0 {
            order.truncate(config.anchors_per_epoch);
        }
        for chunk in order.chunks(batch) {
            let triples: Vec<Triple> =
                chunk.iter().map(|&i| sample_triple(corpus, corpus.pairs[i], config.negatives, &mut rng)).collect();
            batch_gradient(&mut encoder, corpus, &triples, tau);
            adam.step_all(encoder.params_mut());
        }
        epoch_losses.push(batch_loss(&encoder, corpus, &eval, tau));
    }
    Ok((encoder, EncoderHistory { initial_loss, epoch_losses }))
}

/// Mean cosine between CFG neighbors minus mean cosine between an anchor
/// and a uniformly drawn block, over the given contracts.
pub fn neighbor_margin(encoder: &DanEncoder, vocab: &TokenVocab, cfgs: &[ControlFlowGraph], seed: u64) -> f64 {
    let corpus = BlockCorpus::build(cfgs, vocab);
    if corpus.pairs.is_empty() || corpus.sentences.len() < 2 {
        return 0.0;
    }
    let blocks: Vec<&[u32]> = corpus.sentences.iter().map(Vec::as_slice).collect();
    let z = encoder.encode_batch(&blocks);
    let cos = |a: usize, b: usize| z.row(a).iter().zip(z.row(b)).map(|(&x, &y)| (x * y) as f64).sum::<f64>();
    let mut rng = RngStream::new(seed);
    let (mut near, mut far) = (0.0, 0.0);
    for &(a, b) in &corpus.pairs {
        near += cos(a, b);
        far += cos(a, rng.index(corpus.sentences.len()));
    }
    (near - far) / corpus.pairs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::build_cfg;
    use crate::disasm::{assemble_sentence, disassemble};
    use crate::nn::{grad_check, Checkable, GradCheckOptions};

    fn cfg_of(sentence: &str) -> ControlFlowGraph {
        build_cfg(&disassemble(&assemble_sentence(sentence).unwrap()))
    }

    #[test]
    fn vocab_layout() {
        let v = TokenVocab::standard();
        assert_eq!(v.len(), 2 + OPCODES.len() + 256 + 31);
        assert_eq!(v.id("PAD"), 0);
        assert_eq!(v.id("no-such-token"), v.id("UNK"));
        let round = TokenVocab::parse(&v.to_text()).unwrap();
        assert_eq!(round, v);
        assert!(TokenVocab::from_tokens(vec!["UNK".into(), "UNK".into()]).is_err());
    }

    #[test]
    fn tokenization_rules() {
        let listing = disassemble(&assemble_sentence("PUSH1 0x80 PUSH1 0x40 MSTORE").unwrap());
        assert_eq!(tokenize_instructions(&listing.instructions), ["PUSH1", "IMM_80", "PUSH1", "IMM_40", "MSTORE"]);
        let listing = disassemble(&assemble_sentence("PUSH2 0x0010").unwrap());
        assert_eq!(tokenize_instructions(&listing.instructions), ["PUSH2", "PUSHDATA_2"]);
        let listing = disassemble(&crate::disasm::RawBytecode::new(vec![0x0c]));
        assert_eq!(tokenize_instructions(&listing.instructions), ["UNK"]);
        assert!(tokenize_instructions(&[]).is_empty());
    }

    #[test]
    fn encoder_outputs_are_unit_length() {
        let v = TokenVocab::standard();
        let enc = DanEncoder::<f32>::new(v.len(), &mut RngStream::new(5));
        for ids in [vec![], vec![3, 4, 5], vec![v.id("CALL"); 40]] {
            let z = enc.encode_block(&ids);
            assert_eq!(z.len(), NODE_DIM);
            let norm: f32 = z.iter().map(|x| x * x).sum::<f32>().sqrt();
            assert!((norm - 1.0).abs() < 1e-5);
        }
        assert_eq!(enc.encode_block(&[]), enc.encode_block(&[]));
    }

    #[test]
    fn identical_blocks_get_identical_rows() {
        let cfg = cfg_of("JUMPDEST CALLER SLOAD POP JUMPDEST CALLER SLOAD POP STOP");
        let v = TokenVocab::standard();
        let enc = DanEncoder::new(v.len(), &mut RngStream::new(1));
        let m = encode_contract_nodes(&cfg, &enc, &v);
        assert_eq!(m.rows.shape(), &[2, NODE_DIM]);
        // Second block also ends with STOP, so compare the shared prefix
        // through a dedicated pair.
        let cfg = cfg_of("PUSH1 0x05 JUMP JUMPDEST STOP JUMPDEST STOP");
        let m = encode_contract_nodes(&cfg, &enc, &v);
        assert_eq!(m.rows.row(1), m.rows.row(2));
    }

    struct LossProbe {
        enc: DanEncoder<f64>,
        corpus: BlockCorpus,
        triples: Vec<Triple>,
    }

    impl LossProbe {
        fn tensors(&self) -> [&Tensor<f64>; 5] {
            let e = &self.enc;
            [&e.embedding.value, &e.hidden1.w.value, &e.hidden1.b.value, &e.hidden2.w.value, &e.hidden2.b.value]
        }

        fn locate(&self, mut i: usize) -> (usize, usize) {
            for (k, t) in self.tensors().iter().enumerate() {
                if i < t.len() {
                    return (k, i);
                }
                i -= t.len();
            }
            panic!("index out of range")
        }
    }

    impl Checkable for LossProbe {
        fn num_params(&self) -> usize {
            self.tensors().iter().map(|t| t.len()).sum()
        }
        fn get_param(&self, i: usize) -> f64 {
            let (k, j) = self.locate(i);
            self.tensors()[k].data()[j]
        }
        fn set_param(&mut self, i: usize, v: f64) {
            let (k, j) = self.locate(i);
            self.enc.params_mut().swap_remove(k).value.data_mut()[j] = v;
        }
        fn loss(&mut self) -> f64 {
            batch_loss(&self.enc, &self.corpus, &self.triples, 0.1)
        }
        fn gradient(&mut self) -> Vec<f64> {
            for p in self.enc.params_mut() {
                p.zero_grad();
            }
            batch_gradient(&mut self.enc, &self.corpus, &self.triples, 0.1);
            let mut g = Vec::new();
            for p in self.enc.params_mut() {
                g.extend_from_slice(p.grad.data());
            }
            g
        }
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let v = TokenVocab::standard();
        let cfgs = vec![
            cfg_of("PUSH1 0x04 JUMP JUMPDEST CALLER SLOAD PUSH1 0x0b JUMPI STOP JUMPDEST SSTORE STOP"),
            cfg_of("CALLVALUE PUSH1 0x05 JUMPI STOP JUMPDEST ADD MUL STOP"),
        ];
        let corpus = BlockCorpus::build(&cfgs, &v);
        let mut rng = RngStream::new(9);
        let triples = corpus.pairs.iter().map(|&p| sample_triple(&corpus, p, 3, &mut rng)).collect();
        let mut probe = LossProbe { enc: DanEncoder::<f64>::new(v.len(), &mut RngStream::new(2)), corpus, triples };
        let report = grad_check(&mut probe, GradCheckOptions { max_coords: 300, epsilon: 1e-6, ..Default::default() });
        assert!(report.max_rel_error < 1e-3, "{report:?}");
    }
}
