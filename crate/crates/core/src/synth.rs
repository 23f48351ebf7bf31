//! Synthetic solc-shaped contracts for tests, benches and demos.
//!
//! Every contract has the usual dispatcher: free-memory setup, a
//! callvalue guard, then selector comparisons jumping into function bodies.
//! Bodies are runs of stack-neutral statements split into basic blocks.
//! Positive contracts contain one block where a `CALL` is followed by an
//! `SSTORE` (the shape of a reentrancy bug); negatives never put both in
//! the same block.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::disasm::{lookup_mnemonic, RawBytecode};
use crate::nn::RngStream;
use crate::pipeline::ContractRecord;

/// Label name planted by [`generate_corpus`].
pub const PLANTED_VULNERABILITY: &str = "reentrancy-eth";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SynthError {
    #[error("unknown mnemonic {0:?}")]
    UnknownMnemonic(String),
    #[error("label {0} used but never placed")]
    UnplacedLabel(usize),
    #[error("label {0} placed twice")]
    DuplicateLabel(usize),
    #[error("code exceeds the 64 KiB reach of PUSH2")]
    TooLarge,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Item {
    Op(u8),
    Push(Vec<u8>),
    /// PUSH2 of a label's offset.
    PushLabel(usize),
    /// JUMPDEST marking a label.
    Label(usize),
    Raw(Vec<u8>),
}

/// Two-pass assembler with symbolic jump targets.
#[derive(Debug, Clone, Default)]
pub struct Assembler {
    items: Vec<Item>,
    labels: usize,
    error: Option<SynthError>,
}

impl Assembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn new_label(&mut self) -> usize {
        self.labels += 1;
        self.labels - 1
    }

    /// Append opcodes by mnemonic, whitespace separated.
    pub fn ops(&mut self, text: &str) -> &mut Self {
        for word in text.split_whitespace() {
            match lookup_mnemonic(word) {
                Some(info) if !info.is_push() || info.code == 0x5f => self.items.push(Item::Op(info.code)),
                _ => {
                    self.error.get_or_insert(SynthError::UnknownMnemonic(word.to_string()));
                }
            }
        }
        self
    }

    /// PUSHn with the given big-endian bytes (1 to 32 of them).
    pub fn push(&mut self, bytes: &[u8]) -> &mut Self {
        assert!((1..=32).contains(&bytes.len()), "push width must be 1..=32");
        self.items.push(Item::Push(bytes.to_vec()));
        self
    }

    pub fn push_u8(&mut self, v: u8) -> &mut Self {
        self.push(&[v])
    }

    pub fn push_label(&mut self, label: usize) -> &mut Self {
        self.items.push(Item::PushLabel(label));
        self
    }

    pub fn label(&mut self, label: usize) -> &mut Self {
        self.items.push(Item::Label(label));
        self
    }

    /// Bytes copied verbatim (metadata trailers and the like).
    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.items.push(Item::Raw(bytes.to_vec()));
        self
    }

    /// Instructions emitted so far, not counting raw bytes.
    pub fn instruction_count(&self) -> usize {
        self.items.iter().filter(|i| !matches!(i, Item::Raw(_))).count()
    }

    pub fn assemble(&self) -> Result<Vec<u8>, SynthError> {
        if let Some(e) = &self.error {
            return Err(e.clone());
        }
        let mut offsets: BTreeMap<usize, usize> = BTreeMap::new();
        let mut pc = 0;
        for item in &self.items {
            if let Item::Label(l) = item {
                if offsets.insert(*l, pc).is_some() {
                    return Err(SynthError::DuplicateLabel(*l));
                }
            }
            pc += match item {
                Item::Op(_) | Item::Label(_) => 1,
                Item::Push(b) => 1 + b.len(),
                Item::PushLabel(_) => 3,
                Item::Raw(b) => b.len(),
            };
        }
        if pc > 0x1_0000 {
            return Err(SynthError::TooLarge);
        }
        let mut out = Vec::with_capacity(pc);
        for item in &self.items {
            match item {
                Item::Op(c) => out.push(*c),
                Item::Label(_) => out.push(0x5b),
                Item::Push(b) => {
                    out.push(0x5f + b.len() as u8);
                    out.extend_from_slice(b);
                }
                Item::PushLabel(l) => {
                    let at = *offsets.get(l).ok_or(SynthError::UnplacedLabel(*l))?;
                    out.push(0x61);
                    out.extend_from_slice(&(at as u16).to_be_bytes());
                }
                Item::Raw(b) => out.extend_from_slice(b),
            }
        }
        Ok(out)
    }
}

/// Solidity-style CBOR metadata: ipfs hash plus compiler version.
pub fn metadata_trailer(ipfs_hash: &[u8; 32], solc: [u8; 3]) -> Vec<u8> {
    let mut out = hex::decode("a2646970667358221220").expect("static hex");
    out.extend_from_slice(ipfs_hash);
    out.extend_from_slice(&hex::decode("64736f6c6343").expect("static hex"));
    out.extend_from_slice(&solc);
    out.extend_from_slice(&[0x00, 0x33]);
    out
}

/// Free-memory pointer, callvalue guard, selector switch. Returns the
/// label of each function body, in selector order.
fn dispatcher(asm: &mut Assembler, selectors: &[[u8; 4]]) -> Vec<usize> {
    let ok = asm.new_label();
    let fallback = asm.new_label();
    asm.push_u8(0x80).push_u8(0x40).ops("MSTORE CALLVALUE DUP1 ISZERO").push_label(ok).ops("JUMPI");
    asm.push_u8(0).ops("DUP1 REVERT").label(ok).ops("POP");
    asm.push_u8(4).ops("CALLDATASIZE LT").push_label(fallback).ops("JUMPI");
    asm.push_u8(0).ops("CALLDATALOAD").push_u8(0xe0).ops("SHR");
    let bodies: Vec<usize> = selectors.iter().map(|_| asm.new_label()).collect();
    for (sel, &body) in selectors.iter().zip(&bodies) {
        asm.ops("DUP1").push(sel).ops("EQ").push_label(body).ops("JUMPI");
    }
    asm.label(fallback).push_u8(0).ops("DUP1 REVERT");
    bodies
}

/// The withdraw-with-reentrancy contract: balance read, value-bearing call
/// to the sender, then the balance reset. Ends with a metadata trailer.
pub fn mybank() -> RawBytecode {
    let mut asm = Assembler::new();
    let bodies = dispatcher(&mut asm, &[[0x3c, 0xcf, 0xd6, 0x0b]]);
    let ret = asm.new_label();
    let body = asm.new_label();
    asm.label(bodies[0]).push_label(ret).push_label(body).ops("JUMP");
    asm.label(ret).ops("STOP");
    // balances[msg.sender]
    asm.label(body).ops("CALLER").push_u8(0).ops("MSTORE").push_u8(0).push_u8(0x20).ops("MSTORE");
    asm.push_u8(0x40).push_u8(0).ops("KECCAK256 SLOAD");
    // msg.sender.call{value: amount}("")
    asm.push_u8(0).ops("DUP1 DUP1 DUP1 DUP5 CALLER GAS CALL POP POP");
    // balances[msg.sender] = 0
    asm.push_u8(0).push_u8(0x40).push_u8(0).ops("KECCAK256 SSTORE JUMP");
    asm.ops("INVALID");
    let hash: [u8; 32] = hex::decode("83886215b809901e5316a29fb7b300e0026db9a3a9fb143816c40ffe5b89d134")
        .expect("static hex")
        .try_into()
        .expect("32 bytes");
    asm.raw(&metadata_trailer(&hash, [0x00, 0x08, 0x07]));
    RawBytecode::new(asm.assemble().expect("fixed program assembles"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stmt {
    Call,
    Store,
    Neutral,
}

fn emit_stmt(asm: &mut Assembler, stmt: Stmt, rng: &mut RngStream) {
    match stmt {
        Stmt::Call => {
            let out = (rng.index(4) * 0x20) as u8;
            asm.push_u8(0x20).push_u8(out).push_u8(0).push_u8(0).ops("CALLVALUE CALLER GAS CALL POP");
        }
        Stmt::Store => {
            asm.ops("CALLER").push_u8(rng.index(8) as u8).ops("SSTORE");
        }
        Stmt::Neutral => match rng.index(8) {
            0 => {
                asm.push_u8(rng.index(256) as u8).push_u8(rng.index(256) as u8).ops("ADD POP");
            }
            1 => {
                asm.push_u8(rng.index(8) as u8).ops("SLOAD POP");
            }
            2 => {
                asm.ops("CALLDATASIZE").push_u8(0x80 + 0x20 * rng.index(4) as u8).ops("MSTORE");
            }
            3 => {
                asm.push_u8(rng.index(256) as u8).ops("DUP1 MUL POP");
            }
            4 => {
                asm.ops("TIMESTAMP NUMBER LT POP");
            }
            5 => {
                asm.push_u8(0x40).ops("MLOAD").push_u8(0x20).ops("ADD").push_u8(0x40).ops("MSTORE");
            }
            6 => {
                asm.ops("CALLER BALANCE ISZERO POP");
            }
            _ => {
                asm.push_u8(4).ops("CALLDATALOAD").push_u8(1).ops("AND POP");
            }
        },
    }
}

/// Shape of generated contracts.
/// Near-miss content planted in negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoy {
    /// Either a lone `CALL` or a lone `SSTORE`.
    Half,
    /// Both, in two different blocks.
    Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub functions: (usize, usize),
    pub blocks_per_function: (usize, usize),
    pub statements_per_block: (usize, usize),
    /// What a negative may contain instead of the motif.
    pub decoy: Decoy,
    /// Chance that a negative gets the decoy.
    pub decoy_rate: f64,
    /// Pad or grow the program to exactly this many instructions.
    pub target_instructions: Option<usize>,
}

impl SynthConfig {
    /// Comfortably under the small-contract limit.
    pub fn small() -> Self {
        SynthConfig {
            functions: (2, 4),
            blocks_per_function: (2, 4),
            statements_per_block: (2, 4),
            decoy: Decoy::Half,
            decoy_rate: 0.0,
            target_instructions: None,
        }
    }

    /// Programs of exactly `n` instructions.
    pub fn sized(n: usize) -> Self {
        SynthConfig { target_instructions: Some(n), ..Self::small() }
    }
}

fn pick(rng: &mut RngStream, (lo, hi): (usize, usize)) -> usize {
    lo + rng.index(hi - lo + 1)
}

/// One synthetic contract. `vulnerable` plants the motif.
pub fn generate_contract(config: &SynthConfig, vulnerable: bool, rng: &mut RngStream) -> Vec<u8> {
    let mut functions = pick(rng, config.functions);
    // Estimate how many statements a sized target needs.
    if let Some(target) = config.target_instructions {
        functions = functions.max(target / 100 + 1);
    }
    let selectors: Vec<[u8; 4]> = (0..functions).map(|_| (rng.next_u64() as u32).to_be_bytes()).collect();
    // Plan every block's statements first so the motif and decoys can be
    // placed, then emit.
    let mut plan: Vec<Vec<Vec<Stmt>>> = (0..functions)
        .map(|_| {
            (0..pick(rng, config.blocks_per_function))
                .map(|_| (0..pick(rng, config.statements_per_block)).map(|_| Stmt::Neutral).collect())
                .collect()
        })
        .collect();
    let mut blocks: Vec<(usize, usize)> =
        plan.iter().enumerate().flat_map(|(f, bs)| (0..bs.len()).map(move |b| (f, b))).collect();
    rng.shuffle(&mut blocks);
    if vulnerable {
        let (f, b) = blocks[0];
        let block = &mut plan[f][b];
        let at = rng.index(block.len() + 1);
        block.insert(at, Stmt::Call);
        let after = at + 1 + rng.index(block.len() - at);
        block.insert(after, Stmt::Store);
    } else if rng.bernoulli(config.decoy_rate) {
        match config.decoy {
            Decoy::Split if blocks.len() >= 2 => {
                let (f, b) = blocks[0];
                plan[f][b].insert(0, Stmt::Call);
                let (f, b) = blocks[1];
                plan[f][b].push(Stmt::Store);
            }
            _ => {
                let (f, b) = blocks[0];
                let stmt = if rng.bernoulli(0.5) { Stmt::Call } else { Stmt::Store };
                let at = rng.index(plan[f][b].len() + 1);
                plan[f][b].insert(at, stmt);
            }
        }
    }

    let mut asm = Assembler::new();
    let bodies = dispatcher(&mut asm, &selectors);
    for (f, body) in bodies.iter().enumerate() {
        asm.label(*body);
        let n = plan[f].len();
        for (b, stmts) in plan[f].iter().enumerate() {
            for &s in stmts {
                emit_stmt(&mut asm, s, rng);
            }
            if b + 1 < n {
                // Close the block: plain fall-through, an unconditional
                // jump, or a guard that can revert.
                let next = asm.new_label();
                match rng.index(3) {
                    0 => {}
                    1 => {
                        asm.push_label(next).ops("JUMP");
                    }
                    _ => {
                        let revert = asm.new_label();
                        asm.ops("CALLVALUE").push_label(revert).ops("JUMPI").push_label(next).ops("JUMP");
                        asm.label(revert).push_u8(0).ops("DUP1 REVERT");
                    }
                }
                asm.label(next);
            }
        }
        if let Some(target) = config.target_instructions {
            if f + 1 == bodies.len() {
                // Grow with extra neutral blocks, then pad the last one
                // exactly, leaving room for STOP.
                while asm.instruction_count() + 40 <= target {
                    let next = asm.new_label();
                    asm.label(next);
                    for _ in 0..pick(rng, (3, 5)) {
                        emit_stmt(&mut asm, Stmt::Neutral, rng);
                    }
                }
                while asm.instruction_count() + 3 <= target {
                    asm.ops("PC POP");
                }
                if asm.instruction_count() + 2 == target {
                    asm.ops("JUMPDEST");
                }
            }
        }
        asm.ops("STOP");
    }
    asm.assemble().expect("generated program assembles")
}

/// Address for the `i`-th synthetic contract.
pub fn synthetic_address(i: usize) -> String {
    format!("0x{i:040x}")
}

/// `n` labeled contracts, alternating positive and negative before a
/// seeded shuffle, so exactly half are positive when `n` is even.
pub fn generate_corpus(n: usize, config: &SynthConfig, seed: u64) -> Vec<ContractRecord> {
    let root = RngStream::new(seed);
    let mut labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    root.split(0).shuffle(&mut labels);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, vulnerable)| {
            let code = generate_contract(config, vulnerable, &mut root.split(1 + i as u64));
            ContractRecord::new(synthetic_address(i), RawBytecode::new(code)).with_label(PLANTED_VULNERABILITY, vulnerable)
        })
        .collect()
}
