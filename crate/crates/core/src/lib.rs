//! Bytecode-only vulnerability detection for EVM smart contracts.
//!
//! The pipeline runs disassembly ([`disasm`]), control-flow recovery
//! ([`cfg`]), per-block embedding ([`n2v`]), whole-contract graph embedding
//! ([`sc2v`]), then either a nearest-neighbor verdict ([`sibling`]) or a
//! trained classifier ([`model`]). [`pipeline`] wires these together and
//! [`metrics`] scores the results.

pub mod cfg;
pub mod disasm;
pub mod metrics;
pub mod model;
pub mod n2v;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod sc2v;
pub mod sibling;
pub mod synth;
