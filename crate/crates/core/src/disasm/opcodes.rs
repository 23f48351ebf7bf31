//! Static EVM opcode table (through the Cancun fork).
//!
//! Adding an opcode from a later fork is a one-line edit to [`OPCODES`].

use std::sync::OnceLock;

/// One defined opcode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpInfo {
    pub code: u8,
    pub mnemonic: &'static str,
    pub pops: u8,
    pub pushes: u8,
}

impl OpInfo {
    /// Immediate byte count (PUSH1..PUSH32 only).
    pub fn immediate_len(&self) -> usize {
        immediate_len(self.code)
    }

    pub fn is_push(&self) -> bool {
        (PUSH0..=PUSH32).contains(&self.code)
    }

    pub fn is_jumpdest(&self) -> bool {
        self.code == JUMPDEST
    }

    /// Ends a basic block.
    pub fn is_terminator(&self) -> bool {
        matches!(self.code, STOP | JUMP | JUMPI | RETURN | REVERT | INVALID | SELFDESTRUCT)
    }
}

pub const STOP: u8 = 0x00;
pub const ADD: u8 = 0x01;
pub const MSTORE: u8 = 0x52;
pub const SLOAD: u8 = 0x54;
pub const SSTORE: u8 = 0x55;
pub const JUMP: u8 = 0x56;
pub const JUMPI: u8 = 0x57;
pub const JUMPDEST: u8 = 0x5b;
pub const PUSH0: u8 = 0x5f;
pub const PUSH1: u8 = 0x60;
pub const PUSH2: u8 = 0x61;
pub const PUSH4: u8 = 0x63;
pub const PUSH32: u8 = 0x7f;
pub const DUP1: u8 = 0x80;
pub const DUP16: u8 = 0x8f;
pub const SWAP1: u8 = 0x90;
pub const SWAP16: u8 = 0x9f;
pub const POP: u8 = 0x50;
pub const CALL: u8 = 0xf1;
pub const RETURN: u8 = 0xf3;
pub const REVERT: u8 = 0xfd;
pub const INVALID: u8 = 0xfe;
pub const SELFDESTRUCT: u8 = 0xff;

/// Immediate byte count for a raw opcode value.
pub const fn immediate_len(code: u8) -> usize {
    if code >= PUSH1 && code <= PUSH32 {
        (code - PUSH1 + 1) as usize
    } else {
        0
    }
}

macro_rules! op {
    ($code:expr, $name:expr, $pops:expr, $pushes:expr) => {
        OpInfo { code: $code, mnemonic: $name, pops: $pops, pushes: $pushes }
    };
}

/// Every defined opcode. PUSHn / DUPn / SWAPn / LOGn are spelled out so the
/// table stays a flat list.
pub static OPCODES: &[OpInfo] = &[
    op!(0x00, "STOP", 0, 0),
    op!(0x01, "ADD", 2, 1),
    op!(0x02, "MUL", 2, 1),
    op!(0x03, "SUB", 2, 1),
    op!(0x04, "DIV", 2, 1),
    op!(0x05, "SDIV", 2, 1),
    op!(0x06, "MOD", 2, 1),
    op!(0x07, "SMOD", 2, 1),
    op!(0x08, "ADDMOD", 3, 1),
    op!(0x09, "MULMOD", 3, 1),
    op!(0x0a, "EXP", 2, 1),
    op!(0x0b, "SIGNEXTEND", 2, 1),
    op!(0x10, "LT", 2, 1),
    op!(0x11, "GT", 2, 1),
    op!(0x12, "SLT", 2, 1),
    op!(0x13, "SGT", 2, 1),
    op!(0x14, "EQ", 2, 1),
    op!(0x15, "ISZERO", 1, 1),
    op!(0x16, "AND", 2, 1),
    op!(0x17, "OR", 2, 1),
    op!(0x18, "XOR", 2, 1),
    op!(0x19, "NOT", 1, 1),
    op!(0x1a, "BYTE", 2, 1),
    op!(0x1b, "SHL", 2, 1),
    op!(0x1c, "SHR", 2, 1),
    op!(0x1d, "SAR", 2, 1),
    op!(0x20, "KECCAK256", 2, 1),
    op!(0x30, "ADDRESS", 0, 1),
    op!(0x31, "BALANCE", 1, 1),
    op!(0x32, "ORIGIN", 0, 1),
    op!(0x33, "CALLER", 0, 1),
    op!(0x34, "CALLVALUE", 0, 1),
    op!(0x35, "CALLDATALOAD", 1, 1),
    op!(0x36, "CALLDATASIZE", 0, 1),
    op!(0x37, "CALLDATACOPY", 3, 0),
    op!(0x38, "CODESIZE", 0, 1),
    op!(0x39, "CODECOPY", 3, 0),
    op!(0x3a, "GASPRICE", 0, 1),
    op!(0x3b, "EXTCODESIZE", 1, 1),
    op!(0x3c, "EXTCODECOPY", 4, 0),
    op!(0x3d, "RETURNDATASIZE", 0, 1),
    op!(0x3e, "RETURNDATACOPY", 3, 0),
    op!(0x3f, "EXTCODEHASH", 1, 1),
    op!(0x40, "BLOCKHASH", 1, 1),
    op!(0x41, "COINBASE", 0, 1),
    op!(0x42, "TIMESTAMP", 0, 1),
    op!(0x43, "NUMBER", 0, 1),
    op!(0x44, "PREVRANDAO", 0, 1),
    op!(0x45, "GASLIMIT", 0, 1),
    op!(0x46, "CHAINID", 0, 1),
    op!(0x47, "SELFBALANCE", 0, 1),
    op!(0x48, "BASEFEE", 0, 1),
    op!(0x49, "BLOBHASH", 1, 1),
    op!(0x4a, "BLOBBASEFEE", 0, 1),
    op!(0x50, "POP", 1, 0),
    op!(0x51, "MLOAD", 1, 1),
    op!(0x52, "MSTORE", 2, 0),
    op!(0x53, "MSTORE8", 2, 0),
    op!(0x54, "SLOAD", 1, 1),
    op!(0x55, "SSTORE", 2, 0),
    op!(0x56, "JUMP", 1, 0),
    op!(0x57, "JUMPI", 2, 0),
    op!(0x58, "PC", 0, 1),
    op!(0x59, "MSIZE", 0, 1),
    op!(0x5a, "GAS", 0, 1),
    op!(0x5b, "JUMPDEST", 0, 0),
    op!(0x5c, "TLOAD", 1, 1),
    op!(0x5d, "TSTORE", 2, 0),
    op!(0x5e, "MCOPY", 3, 0),
    op!(0x5f, "PUSH0", 0, 1),
    op!(0x60, "PUSH1", 0, 1),
    op!(0x61, "PUSH2", 0, 1),
    op!(0x62, "PUSH3", 0, 1),
    op!(0x63, "PUSH4", 0, 1),
    op!(0x64, "PUSH5", 0, 1),
    op!(0x65, "PUSH6", 0, 1),
    op!(0x66, "PUSH7", 0, 1),
    op!(0x67, "PUSH8", 0, 1),
    op!(0x68, "PUSH9", 0, 1),
    op!(0x69, "PUSH10", 0, 1),
    op!(0x6a, "PUSH11", 0, 1),
    op!(0x6b, "PUSH12", 0, 1),
    op!(0x6c, "PUSH13", 0, 1),
    op!(0x6d, "PUSH14", 0, 1),
    op!(0x6e, "PUSH15", 0, 1),
    op!(0x6f, "PUSH16", 0, 1),
    op!(0x70, "PUSH17", 0, 1),
    op!(0x71, "PUSH18", 0, 1),
    op!(0x72, "PUSH19", 0, 1),
    op!(0x73, "PUSH20", 0, 1),
    op!(0x74, "PUSH21", 0, 1),
    op!(0x75, "PUSH22", 0, 1),
    op!(0x76, "PUSH23", 0, 1),
    op!(0x77, "PUSH24", 0, 1),
    op!(0x78, "PUSH25", 0, 1),
    op!(0x79, "PUSH26", 0, 1),
    op!(0x7a, "PUSH27", 0, 1),
    op!(0x7b, "PUSH28", 0, 1),
    op!(0x7c, "PUSH29", 0, 1),
    op!(0x7d, "PUSH30", 0, 1),
    op!(0x7e, "PUSH31", 0, 1),
    op!(0x7f, "PUSH32", 0, 1),
    op!(0x80, "DUP1", 1, 2),
    op!(0x81, "DUP2", 2, 3),
    op!(0x82, "DUP3", 3, 4),
    op!(0x83, "DUP4", 4, 5),
    op!(0x84, "DUP5", 5, 6),
    op!(0x85, "DUP6", 6, 7),
    op!(0x86, "DUP7", 7, 8),
    op!(0x87, "DUP8", 8, 9),
    op!(0x88, "DUP9", 9, 10),
    op!(0x89, "DUP10", 10, 11),
    op!(0x8a, "DUP11", 11, 12),
    op!(0x8b, "DUP12", 12, 13),
    op!(0x8c, "DUP13", 13, 14),
    op!(0x8d, "DUP14", 14, 15),
    op!(0x8e, "DUP15", 15, 16),
    op!(0x8f, "DUP16", 16, 17),
    op!(0x90, "SWAP1", 2, 2),
    op!(0x91, "SWAP2", 3, 3),
    op!(0x92, "SWAP3", 4, 4),
    op!(0x93, "SWAP4", 5, 5),
    op!(0x94, "SWAP5", 6, 6),
    op!(0x95, "SWAP6", 7, 7),
    op!(0x96, "SWAP7", 8, 8),
    op!(0x97, "SWAP8", 9, 9),
    op!(0x98, "SWAP9", 10, 10),
    op!(0x99, "SWAP10", 11, 11),
    op!(0x9a, "SWAP11", 12, 12),
    op!(0x9b, "SWAP12", 13, 13),
    op!(0x9c, "SWAP13", 14, 14),
    op!(0x9d, "SWAP14", 15, 15),
    op!(0x9e, "SWAP15", 16, 16),
    op!(0x9f, "SWAP16", 17, 17),
    op!(0xa0, "LOG0", 2, 0),
    op!(0xa1, "LOG1", 3, 0),
    op!(0xa2, "LOG2", 4, 0),
    op!(0xa3, "LOG3", 5, 0),
    op!(0xa4, "LOG4", 6, 0),
    op!(0xf0, "CREATE", 3, 1),
    op!(0xf1, "CALL", 7, 1),
    op!(0xf2, "CALLCODE", 7, 1),
    op!(0xf3, "RETURN", 2, 0),
    op!(0xf4, "DELEGATECALL", 6, 1),
    op!(0xf5, "CREATE2", 4, 1),
    op!(0xfa, "STATICCALL", 6, 1),
    op!(0xfd, "REVERT", 2, 0),
    op!(0xfe, "INVALID", 0, 0),
    op!(0xff, "SELFDESTRUCT", 1, 0),
];

/// Older spellings accepted when parsing text.
const ALIASES: &[(&str, u8)] = &[("SHA3", 0x20), ("DIFFICULTY", 0x44), ("SUICIDE", 0xff)];

fn by_code() -> &'static [Option<OpInfo>; 256] {
    static TABLE: OnceLock<[Option<OpInfo>; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [None; 256];
        for info in OPCODES {
            table[info.code as usize] = Some(*info);
        }
        table
    })
}

/// Lookup by byte value; `None` for undefined opcodes.
pub fn lookup(code: u8) -> Option<&'static OpInfo> {
    by_code()[code as usize].as_ref()
}

/// Lookup by mnemonic (case-insensitive, aliases included).
pub fn lookup_mnemonic(name: &str) -> Option<&'static OpInfo> {
    let upper = name.to_ascii_uppercase();
    if let Some(info) = OPCODES.iter().find(|op| op.mnemonic == upper) {
        return Some(info);
    }
    ALIASES
        .iter()
        .find(|(alias, _)| *alias == upper)
        .and_then(|(_, code)| lookup(*code))
}
