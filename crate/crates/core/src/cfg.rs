//! Basic-block partitioning and jump recovery by abstract stack execution.
//!
//! Only PUSH/DUP/SWAP/POP are modeled exactly. Every other opcode pops its
//! arity and pushes `Unknown`. Entry states of a block are merged
//! entry-wise from the top of the stack, which keeps the lattice finite and
//! the worklist terminating.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::disasm::{opcodes, DisassemblyListing, Instruction};

pub type BlockId = usize;

/// EVM stack limit.
pub const DEFAULT_STACK_CAP: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Terminator {
    Jump,
    JumpI,
    Stop,
    Return,
    Revert,
    SelfDestruct,
    Invalid,
    FallThrough,
}

impl Terminator {
    fn of(ins: &Instruction) -> Terminator {
        match ins.opcode {
            opcodes::JUMP => Terminator::Jump,
            opcodes::JUMPI => Terminator::JumpI,
            opcodes::STOP => Terminator::Stop,
            opcodes::RETURN => Terminator::Return,
            opcodes::REVERT => Terminator::Revert,
            opcodes::SELFDESTRUCT => Terminator::SelfDestruct,
            _ if ins.is_terminator() => Terminator::Invalid,
            _ => Terminator::FallThrough,
        }
    }

    pub fn falls_through(self) -> bool {
        matches!(self, Terminator::JumpI | Terminator::FallThrough)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    /// Offset of the first instruction.
    pub id: BlockId,
    pub instructions: Vec<Instruction>,
    pub terminator: Terminator,
}

impl BasicBlock {
    /// Offset one past the last byte of the block.
    pub fn end(&self) -> usize {
        self.instructions.last().map_or(self.id, |i| i.offset + i.len)
    }

    pub fn starts_with_jumpdest(&self) -> bool {
        self.instructions.first().is_some_and(Instruction::is_jumpdest)
    }
}

/// Leaders are offset 0, every JUMPDEST, and every instruction after a
/// terminator. Blocks tile the listing.
pub fn partition_blocks(listing: &DisassemblyListing) -> Vec<BasicBlock> {
    let mut blocks = Vec::new();
    let mut current: Vec<Instruction> = Vec::new();
    let flush = |current: &mut Vec<Instruction>, blocks: &mut Vec<BasicBlock>| {
        if let Some(last) = current.last() {
            let terminator = Terminator::of(last);
            let id = current[0].offset;
            blocks.push(BasicBlock { id, instructions: std::mem::take(current), terminator });
        }
    };
    for ins in &listing.instructions {
        if ins.is_jumpdest() {
            flush(&mut current, &mut blocks);
        }
        let ends = ins.is_terminator();
        current.push(ins.clone());
        if ends {
            flush(&mut current, &mut blocks);
        }
    }
    flush(&mut current, &mut blocks);
    blocks
}

/// 256-bit big-endian word.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word(pub [u8; 32]);

impl Word {
    pub fn from_be_slice(bytes: &[u8]) -> Word {
        let mut out = [0u8; 32];
        let take = bytes.len().min(32);
        out[32 - take..].copy_from_slice(&bytes[bytes.len() - take..]);
        Word(out)
    }

    pub fn from_u64(v: u64) -> Word {
        Word::from_be_slice(&v.to_be_bytes())
    }

    pub fn to_usize(&self) -> Option<usize> {
        let lead = &self.0[..24];
        if lead.iter().any(|&b| b != 0) {
            return None;
        }
        usize::try_from(u64::from_be_bytes(self.0[24..].try_into().unwrap())).ok()
    }
}

impl fmt::Debug for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hex = hex::encode(self.0);
        let trimmed = hex.trim_start_matches('0');
        write!(f, "0x{}", if trimmed.is_empty() { "0" } else { trimmed })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AbstractValue {
    Known(Word),
    Unknown,
}

impl AbstractValue {
    fn meet(self, other: AbstractValue) -> AbstractValue {
        match (self, other) {
            (AbstractValue::Known(a), AbstractValue::Known(b)) if a == b => AbstractValue::Known(a),
            _ => AbstractValue::Unknown,
        }
    }
}

/// Bounded abstract stack, bottom first.
///
/// `open_bottom` marks a context whose caller is unknown: popping past the
/// tracked entries yields `Unknown` without an underflow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractStack {
    pub entries: Vec<AbstractValue>,
    pub cap: usize,
    pub overflow: bool,
    pub open_bottom: bool,
}

impl AbstractStack {
    pub fn new(cap: usize) -> Self {
        AbstractStack { entries: Vec::new(), cap, overflow: false, open_bottom: false }
    }

    pub fn with_values(cap: usize, values: &[AbstractValue]) -> Self {
        let mut s = AbstractStack::new(cap);
        for v in values {
            s.push(*v);
        }
        s
    }

    pub fn depth(&self) -> usize {
        self.entries.len()
    }

    pub fn push(&mut self, v: AbstractValue) {
        if self.entries.len() == self.cap {
            self.entries.remove(0);
            self.overflow = true;
        }
        self.entries.push(v);
    }

    /// Returns `None` on a real underflow.
    fn pop(&mut self) -> Option<AbstractValue> {
        match self.entries.pop() {
            Some(v) => Some(v),
            None if self.open_bottom => Some(AbstractValue::Unknown),
            None => None,
        }
    }

    /// i-th entry from the top (0 = top).
    pub fn peek(&self, i: usize) -> Option<AbstractValue> {
        let n = self.entries.len();
        if i < n {
            Some(self.entries[n - 1 - i])
        } else if self.open_bottom {
            Some(AbstractValue::Unknown)
        } else {
            None
        }
    }

    /// Top-aligned entry-wise meet; the deeper stack's extra bottom entries
    /// become `Unknown`.
    pub fn merge(&self, other: &AbstractStack) -> AbstractStack {
        let depth = self.depth().max(other.depth());
        let mut entries = vec![AbstractValue::Unknown; depth];
        for i in 0..self.depth().min(other.depth()) {
            let a = self.entries[self.depth() - 1 - i];
            let b = other.entries[other.depth() - 1 - i];
            entries[depth - 1 - i] = a.meet(b);
        }
        AbstractStack {
            entries,
            cap: self.cap,
            overflow: self.overflow || other.overflow,
            open_bottom: self.open_bottom || other.open_bottom,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepResult {
    pub out_stack: AbstractStack,
    /// Top of stack at a JUMP/JUMPI, when known.
    pub jump_target: Option<Word>,
    pub underflow: bool,
}

/// Run one block over an abstract entry stack.
pub fn step_block(block: &BasicBlock, in_stack: &AbstractStack) -> StepResult {
    let mut stack = in_stack.clone();
    let mut underflow = false;
    let mut jump_target = None;
    for ins in &block.instructions {
        let code = ins.opcode;
        match code {
            opcodes::PUSH0..=opcodes::PUSH32 => stack.push(AbstractValue::Known(Word::from_be_slice(&ins.immediate))),
            opcodes::DUP1..=opcodes::DUP16 => {
                let n = (code - opcodes::DUP1) as usize;
                let v = stack.peek(n).unwrap_or_else(|| {
                    underflow = true;
                    AbstractValue::Unknown
                });
                stack.push(v);
            }
            opcodes::SWAP1..=opcodes::SWAP16 => {
                let n = (code - opcodes::SWAP1 + 1) as usize;
                if stack.depth() <= n {
                    if !stack.open_bottom {
                        underflow = true;
                    }
                    // Missing slots are unknown; materialize them at the bottom.
                    let missing = n + 1 - stack.depth();
                    stack.entries.splice(0..0, std::iter::repeat_n(AbstractValue::Unknown, missing));
                }
                let depth = stack.depth();
                stack.entries.swap(depth - 1, depth - 1 - n);
            }
            opcodes::JUMP | opcodes::JUMPI => {
                let target = stack.pop();
                if target.is_none() {
                    underflow = true;
                }
                if code == opcodes::JUMPI && stack.pop().is_none() {
                    underflow = true;
                }
                if let Some(AbstractValue::Known(w)) = target {
                    jump_target = Some(w);
                }
            }
            _ => {
                let (pops, pushes) = ins.info().map_or((0, 0), |i| (i.pops, i.pushes));
                for _ in 0..pops {
                    if stack.pop().is_none() {
                        underflow = true;
                    }
                }
                for _ in 0..pushes {
                    stack.push(AbstractValue::Unknown);
                }
            }
        }
    }
    StepResult { out_stack: stack, jump_target, underflow }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiagnosticKind {
    /// Jump target unknown in every context that reached the block.
    UnresolvedTarget,
    /// Some contexts resolved the target; the merged context lost it.
    PartiallyResolved,
    /// Known target that is not a JUMPDEST.
    InvalidTarget { target: String },
    StackUnderflow,
    StackOverflow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub block: BlockId,
    #[serde(flatten)]
    pub kind: DiagnosticKind,
}

#[derive(Debug, Clone, Copy)]
pub struct CfgOptions {
    pub stack_cap: usize,
    /// After the entry fixpoint, also explore JUMPDEST blocks that were not
    /// reached, with an open-bottom stack.
    pub explore_orphans: bool,
}

impl Default for CfgOptions {
    fn default() -> Self {
        CfgOptions { stack_cap: DEFAULT_STACK_CAP, explore_orphans: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlFlowGraph {
    /// Sorted by id.
    pub nodes: Vec<BasicBlock>,
    pub edges: BTreeSet<(BlockId, BlockId)>,
    pub entry: BlockId,
    pub diagnostics: Vec<Diagnostic>,
    /// Block visits performed by the worklist.
    pub iterations: usize,
}

impl ControlFlowGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Position of a block id in `nodes`.
    pub fn index_of(&self, id: BlockId) -> Option<usize> {
        self.nodes.binary_search_by_key(&id, |b| b.id).ok()
    }

    /// Edges as node-index pairs.
    pub fn index_edges(&self) -> Vec<(usize, usize)> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| Some((self.index_of(a)?, self.index_of(b)?)))
            .collect()
    }

    pub fn successors(&self, id: BlockId) -> impl Iterator<Item = BlockId> + '_ {
        self.edges.range((id, 0)..=(id, usize::MAX)).map(|&(_, to)| to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CfgStats {
    pub nodes: usize,
    pub edges: usize,
}

pub fn cfg_stats(cfg: &ControlFlowGraph) -> CfgStats {
    CfgStats { nodes: cfg.node_count(), edges: cfg.edge_count() }
}

pub fn build_cfg(listing: &DisassemblyListing) -> ControlFlowGraph {
    build_cfg_with(listing, CfgOptions::default())
}

pub fn build_cfg_with(listing: &DisassemblyListing, options: CfgOptions) -> ControlFlowGraph {
    let nodes = partition_blocks(listing);
    let by_id: HashMap<BlockId, usize> = nodes.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let n = nodes.len();
    let mut edges = BTreeSet::new();
    let mut jump_edges = vec![false; n];

    // Structural fall-through edges need no stack information.
    for i in 0..n {
        if nodes[i].terminator.falls_through() && i + 1 < n {
            edges.insert((nodes[i].id, nodes[i + 1].id));
        }
    }

    let resolve = |target: &Word| -> Option<usize> {
        let offset = target.to_usize()?;
        let idx = *by_id.get(&offset)?;
        nodes[idx].starts_with_jumpdest().then_some(idx)
    };

    let mut states: Vec<Option<AbstractStack>> = vec![None; n];
    let mut queued = vec![false; n];
    let mut queue = VecDeque::new();
    let mut iterations = 0;

    let mut seeds: Vec<(usize, AbstractStack)> = Vec::new();
    if n > 0 {
        seeds.push((0, AbstractStack::new(options.stack_cap)));
    }
    let mut orphan_pass_done = !options.explore_orphans;

    loop {
        for (idx, stack) in seeds.drain(..) {
            states[idx] = Some(stack);
            queued[idx] = true;
            queue.push_back(idx);
        }
        while let Some(idx) = queue.pop_front() {
            queued[idx] = false;
            iterations += 1;
            let entry = states[idx].clone().expect("queued blocks have a state");
            let step = step_block(&nodes[idx], &entry);
            let mut successors = Vec::with_capacity(2);
            match nodes[idx].terminator {
                Terminator::Jump | Terminator::JumpI => {
                    if let Some(target) = step.jump_target.as_ref().and_then(&resolve) {
                        edges.insert((nodes[idx].id, nodes[target].id));
                        jump_edges[idx] = true;
                        successors.push(target);
                    }
                    if nodes[idx].terminator == Terminator::JumpI && idx + 1 < n {
                        successors.push(idx + 1);
                    }
                }
                Terminator::FallThrough if idx + 1 < n => successors.push(idx + 1),
                _ => {}
            }
            for succ in successors {
                let merged = match &states[succ] {
                    None => step.out_stack.clone(),
                    Some(old) => old.merge(&step.out_stack),
                };
                if states[succ].as_ref() != Some(&merged) {
                    states[succ] = Some(merged);
                    if !queued[succ] {
                        queued[succ] = true;
                        queue.push_back(succ);
                    }
                }
            }
        }
        if orphan_pass_done {
            break;
        }
        orphan_pass_done = true;
        for (idx, block) in nodes.iter().enumerate() {
            if states[idx].is_none() && block.starts_with_jumpdest() {
                let mut stack = AbstractStack::new(options.stack_cap);
                stack.open_bottom = true;
                seeds.push((idx, stack));
            }
        }
        if seeds.is_empty() {
            break;
        }
    }

    let mut diagnostics = Vec::new();
    for (idx, block) in nodes.iter().enumerate() {
        let Some(entry) = &states[idx] else { continue };
        let step = step_block(block, entry);
        if step.underflow {
            diagnostics.push(Diagnostic { block: block.id, kind: DiagnosticKind::StackUnderflow });
        }
        if step.out_stack.overflow && !entry.overflow {
            diagnostics.push(Diagnostic { block: block.id, kind: DiagnosticKind::StackOverflow });
        }
        if matches!(block.terminator, Terminator::Jump | Terminator::JumpI) {
            match step.jump_target {
                Some(target) if resolve(&target).is_none() => diagnostics.push(Diagnostic {
                    block: block.id,
                    kind: DiagnosticKind::InvalidTarget { target: format!("{target:?}") },
                }),
                Some(_) => {}
                None if jump_edges[idx] => {
                    diagnostics.push(Diagnostic { block: block.id, kind: DiagnosticKind::PartiallyResolved })
                }
                None => diagnostics.push(Diagnostic { block: block.id, kind: DiagnosticKind::UnresolvedTarget }),
            }
        }
    }

    ControlFlowGraph { nodes, edges, entry: 0, diagnostics, iterations }
}

#[derive(Serialize)]
struct JsonNode<'a> {
    id: BlockId,
    offsets: Vec<usize>,
    opcodes: Vec<&'a str>,
}

#[derive(Serialize)]
struct JsonCfg<'a> {
    nodes: Vec<JsonNode<'a>>,
    edges: Vec<[BlockId; 2]>,
    diagnostics: &'a [Diagnostic],
}

/// `{nodes:[{id, offsets, opcodes}], edges:[[from,to]], diagnostics:[]}`
pub fn to_json(cfg: &ControlFlowGraph) -> serde_json::Value {
    let doc = JsonCfg {
        nodes: cfg
            .nodes
            .iter()
            .map(|b| JsonNode {
                id: b.id,
                offsets: b.instructions.iter().map(|i| i.offset).collect(),
                opcodes: b.instructions.iter().map(Instruction::mnemonic).collect(),
            })
            .collect(),
        edges: cfg.edges.iter().map(|&(a, b)| [a, b]).collect(),
        diagnostics: &cfg.diagnostics,
    };
    serde_json::to_value(doc).expect("cfg json is always serializable")
}

pub fn to_dot(cfg: &ControlFlowGraph) -> String {
    let mut out = String::from("digraph cfg {\n  node [shape=box, fontname=\"monospace\"];\n");
    for block in &cfg.nodes {
        let mut label = format!("0x{:x}", block.id);
        for ins in &block.instructions {
            label.push_str("\\l");
            label.push_str(&crate::disasm::sentence(std::slice::from_ref(ins)));
        }
        let _ = writeln!(out, "  b{} [label=\"{}\\l\"];", block.id, label);
    }
    for &(a, b) in &cfg.edges {
        let _ = writeln!(out, "  b{a} -> b{b};");
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disasm::{assemble_sentence, disassemble};

    fn listing(text: &str) -> DisassemblyListing {
        disassemble(&assemble_sentence(text).unwrap())
    }

    fn known(v: u64) -> AbstractValue {
        AbstractValue::Known(Word::from_u64(v))
    }

    #[test]
    fn single_stop_block() {
        let blocks = partition_blocks(&listing("STOP"));
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].terminator, Terminator::Stop);
    }

    #[test]
    fn leader_rule() {
        // INVALID at 3 is a terminator, so the JUMPDEST at 4 starts a third block.
        let blocks = partition_blocks(&listing("PUSH1 0x04 JUMP INVALID JUMPDEST STOP"));
        let ids: Vec<_> = blocks.iter().map(|b| b.id).collect();
        assert_eq!(ids, vec![0, 3, 4]);
        let blocks = partition_blocks(&listing("PUSH1 0x03 JUMP JUMPDEST STOP"));
        let ids: Vec<_> = blocks.iter().map(|b| b.id).collect();
        assert_eq!(ids, vec![0, 3]);
    }

    #[test]
    fn step_push_jump() {
        let blocks = partition_blocks(&listing("PUSH1 0x04 JUMP"));
        let r = step_block(&blocks[0], &AbstractStack::new(DEFAULT_STACK_CAP));
        assert_eq!(r.jump_target, Some(Word::from_u64(4)));
        assert!(!r.underflow);
        assert_eq!(r.out_stack.depth(), 0);
    }

    #[test]
    fn step_dup_and_add() {
        let dup = partition_blocks(&listing("DUP1"));
        let r = step_block(&dup[0], &AbstractStack::with_values(DEFAULT_STACK_CAP, &[known(7)]));
        assert_eq!(r.out_stack.entries, vec![known(7), known(7)]);

        let add = partition_blocks(&listing("ADD"));
        let r = step_block(&add[0], &AbstractStack::with_values(DEFAULT_STACK_CAP, &[known(1), known(2)]));
        assert_eq!(r.out_stack.entries, vec![AbstractValue::Unknown]);
    }

    #[test]
    fn step_swap_and_pop() {
        let b = partition_blocks(&listing("SWAP2 POP"));
        let r = step_block(&b[0], &AbstractStack::with_values(DEFAULT_STACK_CAP, &[known(1), known(2), known(3)]));
        assert_eq!(r.out_stack.entries, vec![known(3), known(2)]);
    }

    #[test]
    fn underflow_is_recorded_not_fatal() {
        let b = partition_blocks(&listing("ADD PUSH1 0x01"));
        let r = step_block(&b[0], &AbstractStack::new(DEFAULT_STACK_CAP));
        assert!(r.underflow);
        assert_eq!(r.out_stack.entries, vec![AbstractValue::Unknown, known(1)]);
    }

    #[test]
    fn stack_cap_drops_bottom() {
        let mut s = AbstractStack::new(2);
        s.push(known(1));
        s.push(known(2));
        s.push(known(3));
        assert_eq!(s.entries, vec![known(2), known(3)]);
        assert!(s.overflow);
    }

    #[test]
    fn merge_is_top_aligned() {
        let a = AbstractStack::with_values(8, &[known(9), known(1), known(2)]);
        let b = AbstractStack::with_values(8, &[known(1), known(5)]);
        let m = a.merge(&b);
        assert_eq!(m.entries, vec![AbstractValue::Unknown, known(1), AbstractValue::Unknown]);
        assert_eq!(m, b.merge(&a));
    }

    #[test]
    fn word_conversions() {
        assert_eq!(Word::from_be_slice(&[0x00, 0x10]).to_usize(), Some(16));
        assert_eq!(Word::from_be_slice(&[1; 32]).to_usize(), None);
        assert_eq!(format!("{:?}", Word::from_u64(0)), "0x0");
    }

    #[test]
    fn empty_listing_has_no_nodes() {
        let cfg = build_cfg(&DisassemblyListing::default());
        assert_eq!(cfg_stats(&cfg), CfgStats { nodes: 0, edges: 0 });
    }

    #[test]
    fn json_and_dot_exports() {
        let cfg = build_cfg(&listing("PUSH1 0x03 JUMP JUMPDEST STOP"));
        let json = to_json(&cfg);
        assert_eq!(json["edges"], serde_json::json!([[0, 3]]));
        assert_eq!(json["nodes"][1]["opcodes"], serde_json::json!(["JUMPDEST", "STOP"]));
        assert_eq!(json["nodes"][0]["offsets"], serde_json::json!([0, 2]));
        let dot = to_dot(&cfg);
        assert!(dot.contains("b0 -> b3;"));
    }
}
