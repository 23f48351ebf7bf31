//! Hex parsing, disassembly, reassembly and listing text formats.

pub mod opcodes;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use opcodes::{lookup, lookup_mnemonic, OpInfo, OPCODES};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DisasmError {
    #[error("malformed hex{}: {reason}", .position.map(|p| format!(" at position {p}")).unwrap_or_default())]
    MalformedHex { position: Option<usize>, reason: String },
    #[error("inconsistent listing: {0}")]
    InconsistentListing(String),
    #[error("line {line}: {reason}")]
    MalformedListing { line: usize, reason: String },
}

/// Decoded contract bytes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Hash)]
pub struct RawBytecode {
    pub bytes: Vec<u8>,
    pub had_0x_prefix: bool,
}

impl RawBytecode {
    pub fn new(bytes: Vec<u8>) -> Self {
        RawBytecode { bytes, had_0x_prefix: false }
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    /// Lowercase hex, re-adding the prefix if the source had one.
    pub fn to_hex(&self) -> String {
        let body = hex::encode(&self.bytes);
        if self.had_0x_prefix {
            format!("0x{body}")
        } else {
            body
        }
    }
}

/// Parse optional-`0x` hex text. Leading/trailing whitespace is ignored.
pub fn parse_hex(text: &str) -> Result<RawBytecode, DisasmError> {
    let lead = text.len() - text.trim_start().len();
    let trimmed = text.trim();
    let (digits, had_0x_prefix, base) = match trimmed.strip_prefix("0x").or_else(|| trimmed.strip_prefix("0X")) {
        Some(rest) => (rest, true, lead + 2),
        None => (trimmed, false, lead),
    };
    if let Some((i, c)) = digits.char_indices().find(|(_, c)| !c.is_ascii_hexdigit()) {
        return Err(DisasmError::MalformedHex {
            position: Some(base + i),
            reason: format!("non-hex character {c:?}"),
        });
    }
    if digits.len() % 2 != 0 {
        return Err(DisasmError::MalformedHex {
            position: None,
            reason: format!("odd number of hex digits ({})", digits.len()),
        });
    }
    // Validated above, so decoding cannot fail.
    let bytes = hex::decode(digits).map_err(|e| DisasmError::MalformedHex { position: None, reason: e.to_string() })?;
    Ok(RawBytecode { bytes, had_0x_prefix })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InstructionFlags {
    pub unknown_opcode: bool,
    pub truncated_immediate: bool,
}

/// One decoded instruction.
///
/// `immediate` always holds exactly n bytes for PUSHn; a PUSH cut off by the
/// end of code is zero-padded, flagged, and `len` counts only the bytes that
/// were really present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub offset: usize,
    pub opcode: u8,
    pub immediate: Vec<u8>,
    pub flags: InstructionFlags,
    pub len: usize,
}

impl Instruction {
    pub fn info(&self) -> Option<&'static OpInfo> {
        lookup(self.opcode)
    }

    pub fn mnemonic(&self) -> &'static str {
        self.info().map_or("UNKNOWN", |i| i.mnemonic)
    }

    pub fn is_jumpdest(&self) -> bool {
        self.opcode == opcodes::JUMPDEST
    }

    /// Undefined opcodes halt execution, so they terminate a block too.
    pub fn is_terminator(&self) -> bool {
        self.info().is_none_or(OpInfo::is_terminator)
    }

    /// Immediate bytes actually present in the code.
    pub fn present_immediate(&self) -> &[u8] {
        &self.immediate[..self.len - 1]
    }

    /// Compact rendering: uppercase hex without leading zeros (`0x0`, `0x10`).
    pub fn immediate_compact(&self) -> Option<String> {
        if self.immediate.is_empty() {
            return None;
        }
        let hex = hex::encode_upper(&self.immediate);
        let trimmed = hex.trim_start_matches('0');
        Some(format!("0x{}", if trimmed.is_empty() { "0" } else { trimmed }))
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:x}: ", self.offset)?;
        if self.flags.unknown_opcode {
            return write!(f, "UNKNOWN(0x{:02x})", self.opcode);
        }
        write!(f, "{}", self.mnemonic())?;
        if !self.immediate.is_empty() {
            write!(f, " 0x{}", hex::encode(self.present_immediate()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DisassemblyListing {
    pub instructions: Vec<Instruction>,
    pub code_length: usize,
}

impl DisassemblyListing {
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// Space-separated opcode sentence, e.g. `PUSH1 0x80 PUSH1 0x40 MSTORE`.
    pub fn to_sentence(&self) -> String {
        sentence(&self.instructions)
    }

    /// `OFFSET: MNEMONIC [0xIMMEDIATE]`, one instruction per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ins in &self.instructions {
            out.push_str(&ins.to_string());
            out.push('\n');
        }
        out
    }
}

pub(crate) fn sentence(instructions: &[Instruction]) -> String {
    let mut words = Vec::with_capacity(instructions.len() * 2);
    for ins in instructions {
        if ins.flags.unknown_opcode {
            words.push(format!("UNKNOWN(0x{:02x})", ins.opcode));
            continue;
        }
        words.push(ins.mnemonic().to_string());
        if let Some(imm) = ins.immediate_compact() {
            words.push(imm);
        }
    }
    words.join(" ")
}

/// Decode every byte exactly once. Never fails: undefined bytes become
/// one-byte UNKNOWN instructions and a PUSH running off the end is padded.
pub fn disassemble(code: &RawBytecode) -> DisassemblyListing {
    let bytes = &code.bytes;
    let mut instructions = Vec::with_capacity(bytes.len() / 2 + 1);
    let mut pc = 0;
    while pc < bytes.len() {
        let opcode = bytes[pc];
        let width = opcodes::immediate_len(opcode);
        let available = width.min(bytes.len() - pc - 1);
        let mut immediate = bytes[pc + 1..pc + 1 + available].to_vec();
        immediate.resize(width, 0);
        let flags = InstructionFlags {
            unknown_opcode: lookup(opcode).is_none(),
            truncated_immediate: available < width,
        };
        instructions.push(Instruction { offset: pc, opcode, immediate, flags, len: 1 + available });
        pc += 1 + available;
    }
    DisassemblyListing { instructions, code_length: bytes.len() }
}

/// Inverse of [`disassemble`].
pub fn reassemble(listing: &DisassemblyListing) -> Result<RawBytecode, DisasmError> {
    let mut bytes = Vec::with_capacity(listing.code_length);
    let last = listing.instructions.len().saturating_sub(1);
    for (i, ins) in listing.instructions.iter().enumerate() {
        if ins.offset != bytes.len() {
            return Err(DisasmError::InconsistentListing(format!(
                "instruction {i} at offset 0x{:x}, expected 0x{:x}",
                ins.offset,
                bytes.len()
            )));
        }
        let width = opcodes::immediate_len(ins.opcode);
        if ins.immediate.len() != width {
            return Err(DisasmError::InconsistentListing(format!(
                "instruction {i} carries {} immediate bytes, opcode needs {width}",
                ins.immediate.len()
            )));
        }
        let full = 1 + width;
        let ok_len = ins.len == full || (i == last && ins.flags.truncated_immediate && ins.len >= 1 && ins.len < full);
        if !ok_len {
            return Err(DisasmError::InconsistentListing(format!("instruction {i} has length {}", ins.len)));
        }
        bytes.push(ins.opcode);
        bytes.extend_from_slice(ins.present_immediate());
    }
    if bytes.len() != listing.code_length {
        return Err(DisasmError::InconsistentListing(format!(
            "instructions cover {} bytes, listing claims {}",
            bytes.len(),
            listing.code_length
        )));
    }
    Ok(RawBytecode::new(bytes))
}

/// Parse the `OFFSET: MNEMONIC [0xIMMEDIATE]` text produced by
/// [`DisassemblyListing::to_text`]. Blank lines are skipped.
pub fn parse_listing(text: &str) -> Result<DisassemblyListing, DisasmError> {
    let mut bytes = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let bad = |reason: String| DisasmError::MalformedListing { line, reason };
        let (offset, rest) = raw.split_once(':').ok_or_else(|| bad("missing ':'".into()))?;
        let offset = offset
            .trim()
            .strip_prefix("0x")
            .and_then(|o| usize::from_str_radix(o, 16).ok())
            .ok_or_else(|| bad(format!("bad offset {offset:?}")))?;
        if offset != bytes.len() {
            return Err(bad(format!("offset 0x{offset:x} does not follow previous instruction")));
        }
        let mut words = rest.split_whitespace();
        let word = words.next().ok_or_else(|| bad("missing mnemonic".into()))?;
        if let Some(code) = word.strip_prefix("UNKNOWN(0x").and_then(|w| w.strip_suffix(')')) {
            let code = u8::from_str_radix(code, 16).map_err(|_| bad(format!("bad opcode {word:?}")))?;
            bytes.push(code);
            continue;
        }
        let info = lookup_mnemonic(word).ok_or_else(|| bad(format!("unknown mnemonic {word:?}")))?;
        bytes.push(info.code);
        let width = info.immediate_len();
        match (width, words.next()) {
            (0, None) => {}
            (0, Some(extra)) => return Err(bad(format!("unexpected operand {extra:?}"))),
            (_, None) => return Err(bad(format!("{} needs an immediate", info.mnemonic))),
            (_, Some(imm)) => {
                let imm = parse_hex(imm).map_err(|e| bad(e.to_string()))?;
                if imm.len() > width {
                    return Err(bad(format!("immediate wider than {width} bytes")));
                }
                bytes.extend_from_slice(&imm.bytes);
            }
        }
    }
    let listing = disassemble(&RawBytecode::new(bytes));
    Ok(listing)
}

/// Assemble a space-separated opcode sentence (the inverse of
/// [`DisassemblyListing::to_sentence`]). Short immediates are left-padded.
pub fn assemble_sentence(text: &str) -> Result<RawBytecode, DisasmError> {
    let mut bytes = Vec::new();
    let mut words = text.split_whitespace().peekable();
    let mut position = 0;
    while let Some(word) = words.next() {
        position += 1;
        let bad = |line: usize, reason: String| DisasmError::MalformedListing { line, reason };
        let info = lookup_mnemonic(word).ok_or_else(|| bad(position, format!("unknown mnemonic {word:?}")))?;
        bytes.push(info.code);
        let width = info.immediate_len();
        if width == 0 {
            continue;
        }
        let imm = words.next().ok_or_else(|| bad(position, format!("{} needs an immediate", info.mnemonic)))?;
        position += 1;
        let digits = imm.strip_prefix("0x").or_else(|| imm.strip_prefix("0X")).unwrap_or(imm);
        let padded = if digits.len() % 2 == 1 { format!("0{digits}") } else { digits.to_string() };
        let value = parse_hex(&padded).map_err(|e| bad(position, e.to_string()))?.bytes;
        if value.len() > width {
            return Err(bad(position, format!("immediate {imm} wider than {width} bytes")));
        }
        bytes.extend(std::iter::repeat_n(0u8, width - value.len()));
        bytes.extend_from_slice(&value);
    }
    Ok(RawBytecode::new(bytes))
}

/// Split a trailing Solidity metadata blob off the code.
///
/// The last two bytes give the blob length L; the L bytes before them must
/// parse as a CBOR map with a `solc` key. Otherwise the trailer is empty.
pub fn strip_metadata(code: &RawBytecode) -> (RawBytecode, RawBytecode) {
    let bytes = &code.bytes;
    let split = metadata_split(bytes);
    let (body, trailer) = bytes.split_at(split.unwrap_or(bytes.len()));
    (
        RawBytecode { bytes: body.to_vec(), had_0x_prefix: code.had_0x_prefix },
        RawBytecode { bytes: trailer.to_vec(), had_0x_prefix: code.had_0x_prefix },
    )
}

fn metadata_split(bytes: &[u8]) -> Option<usize> {
    let n = bytes.len();
    if n < 2 {
        return None;
    }
    let len = u16::from_be_bytes([bytes[n - 2], bytes[n - 1]]) as usize;
    if len == 0 || len + 2 > n {
        return None;
    }
    let start = n - 2 - len;
    cbor_map_has_solc(&bytes[start..n - 2]).then_some(start)
}

/// Minimal CBOR walk: a definite-length map of text keys whose values are
/// byte strings, text strings, unsigned ints or booleans, consuming the
/// whole blob.
fn cbor_map_has_solc(blob: &[u8]) -> bool {
    fn header(blob: &[u8], pos: &mut usize) -> Option<(u8, usize)> {
        let b = *blob.get(*pos)?;
        *pos += 1;
        let major = b >> 5;
        let info = b & 0x1f;
        let arg = match info {
            0..=23 => info as usize,
            24 => {
                let v = *blob.get(*pos)? as usize;
                *pos += 1;
                v
            }
            25 => {
                let v = u16::from_be_bytes([*blob.get(*pos)?, *blob.get(*pos + 1)?]) as usize;
                *pos += 2;
                v
            }
            _ => return None,
        };
        Some((major, arg))
    }

    let mut pos = 0;
    let Some((5, entries)) = header(blob, &mut pos) else { return false };
    let mut saw_solc = false;
    for _ in 0..entries {
        let Some((3, klen)) = header(blob, &mut pos) else { return false };
        let Some(key) = blob.get(pos..pos + klen) else { return false };
        pos += klen;
        if key == b"solc" {
            saw_solc = true;
        }
        // Booleans are simple values (major 7, 20/21).
        if matches!(blob.get(pos), Some(0xf4 | 0xf5)) {
            pos += 1;
            continue;
        }
        match header(blob, &mut pos) {
            Some((0, _)) => {}
            Some((2 | 3, vlen)) => {
                if pos + vlen > blob.len() {
                    return false;
                }
                pos += vlen;
            }
            _ => return false,
        }
    }
    saw_solc && pos == blob.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_hex_basics() {
        assert_eq!(parse_hex("0x60").unwrap().bytes, vec![0x60]);
        assert!(parse_hex("0x60").unwrap().had_0x_prefix);
        assert_eq!(parse_hex("").unwrap().bytes, Vec::<u8>::new());
        assert_eq!(parse_hex("  0XAbCd \n").unwrap().bytes, vec![0xab, 0xcd]);
        assert!(!parse_hex("abcd").unwrap().had_0x_prefix);
    }

    #[test]
    fn parse_hex_errors() {
        match parse_hex("0x123") {
            Err(DisasmError::MalformedHex { position: None, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_hex(" 0x12g4") {
            Err(DisasmError::MalformedHex { position: Some(5), .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_instructions() {
        let push = disassemble(&RawBytecode::new(vec![0x60, 0x80]));
        assert_eq!(push.to_sentence(), "PUSH1 0x80");
        assert_eq!(push.instructions[0].len, 2);
        let mstore = disassemble(&RawBytecode::new(vec![0x52]));
        assert_eq!(mstore.instructions[0].mnemonic(), "MSTORE");
    }

    #[test]
    fn unknown_and_truncated() {
        let listing = disassemble(&RawBytecode::new(vec![0x0c, 0x61, 0xaa]));
        assert_eq!(listing.len(), 2);
        assert!(listing.instructions[0].flags.unknown_opcode);
        let push = &listing.instructions[1];
        assert!(push.flags.truncated_immediate);
        assert_eq!(push.immediate, vec![0xaa, 0x00]);
        assert_eq!(push.len, 2);
        assert_eq!(reassemble(&listing).unwrap().bytes, vec![0x0c, 0x61, 0xaa]);
        let text = listing.to_text();
        assert_eq!(text, "0x0: UNKNOWN(0x0c)\n0x1: PUSH2 0xaa\n");
        assert_eq!(parse_listing(&text).unwrap(), listing);
    }

    #[test]
    fn reassemble_rejects_bad_offsets() {
        let mut listing = disassemble(&RawBytecode::new(vec![0x60, 0x01, 0x00]));
        listing.instructions[1].offset = 3;
        assert!(matches!(reassemble(&listing), Err(DisasmError::InconsistentListing(_))));
        let mut listing = disassemble(&RawBytecode::new(vec![0x60, 0x01]));
        listing.code_length = 5;
        assert!(reassemble(&listing).is_err());
        assert_eq!(reassemble(&DisassemblyListing::default()).unwrap().bytes, Vec::<u8>::new());
    }

    #[test]
    fn text_listing_format() {
        let listing = disassemble(&parse_hex("0x6080604052610010").unwrap());
        assert_eq!(listing.to_text(), "0x0: PUSH1 0x80\n0x2: PUSH1 0x40\n0x4: MSTORE\n0x5: PUSH2 0x0010\n");
        assert_eq!(listing.to_sentence(), "PUSH1 0x80 PUSH1 0x40 MSTORE PUSH2 0x10");
    }

    #[test]
    fn sentence_round_trip() {
        let code = assemble_sentence("PUSH1 0x80 PUSH1 0x40 MSTORE PUSH2 0x10 JUMPI PUSH1 0x0").unwrap();
        assert_eq!(hex::encode(&code.bytes), "6080604052610010576000");
        assert!(assemble_sentence("PUSH1 0x1234").is_err());
        assert!(assemble_sentence("FROB").is_err());
    }

    #[test]
    fn strip_metadata_without_marker() {
        let code = RawBytecode::new(vec![0x60, 0x00, 0x00, 0x02]);
        let (body, trailer) = strip_metadata(&code);
        assert_eq!(body, code);
        assert!(trailer.is_empty());
    }

    #[test]
    fn strip_metadata_rejects_non_cbor() {
        // Length field points at bytes containing "solc" but not a CBOR map.
        let mut bytes = vec![0x00, 0x73, 0x6f, 0x6c, 0x63];
        bytes.extend_from_slice(&[0x00, 0x05]);
        let (body, trailer) = strip_metadata(&RawBytecode::new(bytes.clone()));
        assert_eq!(body.bytes, bytes);
        assert!(trailer.is_empty());
    }
}
