//! Static description of the target architecture.
//!
//! Every phase of the optimizer is driven by the tables in [`ArchSpec`]:
//! addressing-mode descriptors (size, speed, operand equivalence class, span
//! restriction), opcode descriptors (operand count, speed, opcode equivalence
//! ring, per-operand addressing classes) and the byte-level encoding table.
//!
//! [`ArchSpec::sdm1`] returns the tables for SDM-1, a small 32-bit machine with
//! three tiers of span-dependent operands (8-bit displacement, 16-bit
//! displacement, 32-bit absolute). See `docs/sdm1.md` for the reference table.

use std::fmt;
use std::sync::OnceLock;

use thiserror::Error;

/// Ordinal of an addressing mode in [`ArchSpec::modes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModeId(pub u8);

/// Ordinal of an opcode in [`ArchSpec::opcodes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OpcId(pub u8);

impl ModeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl OpcId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// SDM-1 opcode and mode ordinals.
pub mod sdm1 {
    use super::{ModeId, OpcId};

    pub const AM_D8: ModeId = ModeId(0);
    pub const AM_D16: ModeId = ModeId(1);
    pub const AM_ABS: ModeId = ModeId(2);
    pub const AM_REG: ModeId = ModeId(3);
    pub const AM_IMM32: ModeId = ModeId(4);

    pub const O_HALT: OpcId = OpcId(0);
    pub const O_NOP: OpcId = OpcId(1);
    pub const O_RET: OpcId = OpcId(2);
    pub const O_JMP: OpcId = OpcId(3);
    pub const O_JSR: OpcId = OpcId(4);
    pub const O_BEQ: OpcId = OpcId(5);
    pub const O_BNE: OpcId = OpcId(6);
    pub const O_LEA: OpcId = OpcId(7);
    pub const O_LD: OpcId = OpcId(8);
    pub const O_ST: OpcId = OpcId(9);
    pub const O_LDI: OpcId = OpcId(10);
    pub const O_MOV: OpcId = OpcId(11);
    pub const O_ADD: OpcId = OpcId(12);
    pub const O_SUB: OpcId = OpcId(13);
    pub const O_CMP: OpcId = OpcId(14);
    pub const O_ADDI: OpcId = OpcId(15);
    pub const O_PUSH: OpcId = OpcId(16);
    pub const O_POP: OpcId = OpcId(17);
    pub const O_OUT: OpcId = OpcId(18);
    pub const O_IN: OpcId = OpcId(19);

    /// Number of general registers; r15 is the stack pointer.
    pub const NUM_REGS: u8 = 16;
    pub const SP: u8 = 15;

    /// Displacements are relative to the instruction start plus this bias.
    pub const PC_BIAS: i64 = 2;
}

/// Which span window, if any, restricts a mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanKind {
    None,
    D8,
    D16,
}

/// Inclusive windows on `target - instruction_start` for the displacement modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanTable {
    pub d8_min: i64,
    pub d8_max: i64,
    pub d16_min: i64,
    pub d16_max: i64,
}

impl SpanTable {
    pub const SDM1: SpanTable = SpanTable {
        d8_min: -126,
        d8_max: 129,
        d16_min: -32766,
        d16_max: 32769,
    };

    /// `(min, max)` for a span kind, `None` when unrestricted.
    pub fn window(&self, kind: SpanKind) -> Option<(i64, i64)> {
        match kind {
            SpanKind::None => None,
            SpanKind::D8 => Some((self.d8_min, self.d8_max)),
            SpanKind::D16 => Some((self.d16_min, self.d16_max)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModeDescriptor {
    pub id: ModeId,
    pub name: &'static str,
    /// Bytes of extension word.
    pub ext_size: u8,
    /// Fixed per-operand bytes placed before all extension words (register byte).
    pub reg_bytes: u8,
    pub speed: u8,
    /// Operand equivalence class, including the mode itself.
    pub oec: Vec<ModeId>,
    pub span: SpanKind,
    /// Extension word is a displacement from the instruction start.
    pub pc_relative: bool,
}

#[derive(Debug, Clone)]
pub struct OpcodeDescriptor {
    pub id: OpcId,
    pub name: &'static str,
    pub speed: u8,
    /// Next opcode in the equivalence ring; `None` for a singleton class.
    pub iec_next: Option<OpcId>,
    /// Legal modes per operand position; `class.len()` is the operand count.
    pub class: Vec<Vec<ModeId>>,
    pub source: Vec<bool>,
    pub dest: Vec<bool>,
}

impl OpcodeDescriptor {
    pub fn noper(&self) -> usize {
        self.class.len()
    }
}

/// One opcode byte and the operand modes it implies.
#[derive(Debug, Clone)]
pub struct Encoding {
    pub byte: u8,
    pub opc: OpcId,
    pub modes: Vec<ModeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IsaError {
    #[error("invalid opcode id {0}")]
    InvalidOpcode(u8),
    #[error("invalid mode id {0}")]
    InvalidMode(u8),
    #[error("opcode {opc} has no operand {opnum}")]
    InvalidOperand { opc: &'static str, opnum: usize },
    #[error("mode {mode} is not legal for operand {opnum} of {opc}")]
    IllegalMode { opc: &'static str, opnum: usize, mode: &'static str },
    #[error("{opc} takes {expected} operands, got {got}")]
    OperandCount { opc: &'static str, expected: usize, got: usize },
    #[error("no encoding for {0}")]
    NoEncoding(String),
    #[error("inconsistent architecture tables: {0}")]
    Tables(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unknown opcode byte {byte:#04x} at offset {offset:#x}")]
    UnknownOpcode { offset: usize, byte: u8 },
    #[error("truncated instruction at offset {offset:#x}")]
    Truncated { offset: usize },
    #[error("invalid register {reg} at offset {offset:#x}")]
    BadRegister { offset: usize, reg: u8 },
}

/// One operand as it appears in an instruction image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawOperand {
    pub mode: ModeId,
    /// Register number for register modes.
    pub reg: Option<u8>,
    /// Extension word: sign-extended displacement, address or immediate.
    pub value: u32,
}

impl RawOperand {
    pub fn reg(r: u8) -> Self {
        RawOperand { mode: sdm1::AM_REG, reg: Some(r), value: 0 }
    }

    pub fn ext(mode: ModeId, value: u32) -> Self {
        RawOperand { mode, reg: None, value }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub opc: OpcId,
    pub len: usize,
    pub operands: Vec<RawOperand>,
    /// Byte offset of each operand's register byte or extension word.
    pub offsets: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ArchSpec {
    pub name: &'static str,
    pub modes: Vec<ModeDescriptor>,
    pub opcodes: Vec<OpcodeDescriptor>,
    pub spans: SpanTable,
    pub encodings: Vec<Encoding>,
    decode_table: Vec<Option<usize>>,
}

impl ArchSpec {
    /// Builds an architecture, closing every OEC under reflexivity and checking
    /// symmetry, ring closure and encoding consistency.
    pub fn new(
        name: &'static str,
        mut modes: Vec<ModeDescriptor>,
        opcodes: Vec<OpcodeDescriptor>,
        spans: SpanTable,
        encodings: Vec<Encoding>,
    ) -> Result<Self, IsaError> {
        for (i, m) in modes.iter_mut().enumerate() {
            if m.id.index() != i {
                return Err(IsaError::Tables(format!("mode {} out of order", m.name)));
            }
            if !m.oec.contains(&m.id) {
                m.oec.insert(0, m.id);
            }
            if ![0, 1, 2, 4].contains(&m.ext_size) {
                return Err(IsaError::Tables(format!("mode {} ext_size {}", m.name, m.ext_size)));
            }
        }
        for m in &modes {
            for other in &m.oec {
                let o = modes
                    .get(other.index())
                    .ok_or(IsaError::InvalidMode(other.0))?;
                if !o.oec.contains(&m.id) {
                    return Err(IsaError::Tables(format!("oec of {} not symmetric", m.name)));
                }
            }
        }
        for (i, op) in opcodes.iter().enumerate() {
            if op.id.index() != i {
                return Err(IsaError::Tables(format!("opcode {} out of order", op.name)));
            }
            if op.source.len() != op.noper() || op.dest.len() != op.noper() {
                return Err(IsaError::Tables(format!("{} operand flags", op.name)));
            }
            if op.class.iter().any(|c| c.is_empty()) {
                return Err(IsaError::Tables(format!("{} has an empty class", op.name)));
            }
            // the ring must lead back to the starting opcode
            let mut cur = op.id;
            let mut steps = 0;
            while let Some(next) = opcodes.get(cur.index()).and_then(|d| d.iec_next) {
                cur = next;
                steps += 1;
                if cur == op.id {
                    break;
                }
                if steps > opcodes.len() {
                    return Err(IsaError::Tables(format!("iec ring of {} does not close", op.name)));
                }
            }
        }
        let mut decode_table = vec![None; 256];
        for (i, e) in encodings.iter().enumerate() {
            if decode_table[e.byte as usize].is_some() {
                return Err(IsaError::Tables(format!("duplicate encoding {:#04x}", e.byte)));
            }
            let d = opcodes.get(e.opc.index()).ok_or(IsaError::InvalidOpcode(e.opc.0))?;
            if d.noper() != e.modes.len()
                || e.modes.iter().zip(&d.class).any(|(m, c)| !c.contains(m))
            {
                return Err(IsaError::Tables(format!("encoding {:#04x} inconsistent", e.byte)));
            }
            decode_table[e.byte as usize] = Some(i);
        }
        Ok(ArchSpec { name, modes, opcodes, spans, encodings, decode_table })
    }

    /// The SDM-1 tables.
    pub fn sdm1() -> &'static ArchSpec {
        static SDM1: OnceLock<ArchSpec> = OnceLock::new();
        SDM1.get_or_init(build_sdm1)
    }

    pub fn mode(&self, id: ModeId) -> &ModeDescriptor {
        &self.modes[id.index()]
    }

    pub fn opcode(&self, id: OpcId) -> &OpcodeDescriptor {
        &self.opcodes[id.index()]
    }

    fn checked_opcode(&self, id: OpcId) -> Result<&OpcodeDescriptor, IsaError> {
        self.opcodes.get(id.index()).ok_or(IsaError::InvalidOpcode(id.0))
    }

    pub fn opcode_by_name(&self, name: &str) -> Option<OpcId> {
        self.opcodes.iter().find(|d| d.name == name).map(|d| d.id)
    }

    pub fn mode_by_name(&self, name: &str) -> Option<ModeId> {
        self.modes.iter().find(|d| d.name == name).map(|d| d.id)
    }

    /// Legal modes for operand `opnum` of `opc`.
    pub fn addressing_class(&self, opc: OpcId, opnum: usize) -> Result<&[ModeId], IsaError> {
        let d = self.checked_opcode(opc)?;
        d.class
            .get(opnum)
            .map(Vec::as_slice)
            .ok_or(IsaError::InvalidOperand { opc: d.name, opnum })
    }

    /// All opcodes in `opc`'s equivalence ring, starting with `opc`.
    pub fn opcode_equiv_class(&self, opc: OpcId) -> Result<Vec<OpcId>, IsaError> {
        self.checked_opcode(opc)?;
        let mut out = vec![opc];
        let mut cur = opc;
        while let Some(next) = self.opcode(cur).iec_next {
            if next == opc {
                break;
            }
            out.push(next);
            cur = next;
        }
        Ok(out)
    }

    pub fn operand_equiv_class(&self, mode: ModeId) -> Result<&[ModeId], IsaError> {
        self.modes
            .get(mode.index())
            .map(|m| m.oec.as_slice())
            .ok_or(IsaError::InvalidMode(mode.0))
    }

    /// Whether `mode` can reach a target `range` bytes from the instruction start.
    pub fn span_ok(&self, mode: ModeId, range: i64) -> bool {
        match self.spans.window(self.mode(mode).span) {
            None => true,
            Some((lo, hi)) => (lo..=hi).contains(&range),
        }
    }

    /// Relative cost of a pair: opcode speed + mode speed + mode size.
    pub fn cost(&self, opc: OpcId, mode: ModeId) -> u32 {
        let m = self.mode(mode);
        self.opcode(opc).speed as u32 + m.speed as u32 + m.ext_size as u32
    }

    pub fn instr_size(&self, opc: OpcId, modes: &[ModeId]) -> Result<usize, IsaError> {
        let d = self.checked_opcode(opc)?;
        if modes.len() != d.noper() {
            return Err(IsaError::OperandCount { opc: d.name, expected: d.noper(), got: modes.len() });
        }
        let mut size = 1;
        for (opnum, &m) in modes.iter().enumerate() {
            if !d.class[opnum].contains(&m) {
                let name = self.modes.get(m.index()).map_or("?", |md| md.name);
                return Err(IsaError::IllegalMode { opc: d.name, opnum, mode: name });
            }
            let md = self.mode(m);
            size += md.reg_bytes as usize + md.ext_size as usize;
        }
        Ok(size)
    }

    /// Byte offset of every operand's field. Register bytes come first in
    /// operand order, then extension words in operand order.
    pub fn operand_offsets(&self, modes: &[ModeId]) -> Vec<usize> {
        let reg_total: usize = modes.iter().map(|&m| self.mode(m).reg_bytes as usize).sum();
        let mut reg_at = 1;
        let mut ext_at = 1 + reg_total;
        modes
            .iter()
            .map(|&m| {
                let md = self.mode(m);
                if md.reg_bytes > 0 {
                    let at = reg_at;
                    reg_at += md.reg_bytes as usize;
                    at
                } else {
                    let at = ext_at;
                    ext_at += md.ext_size as usize;
                    at
                }
            })
            .collect()
    }

    pub fn encoding_for(&self, opc: OpcId, modes: &[ModeId]) -> Option<u8> {
        self.encodings
            .iter()
            .find(|e| e.opc == opc && e.modes == modes)
            .map(|e| e.byte)
    }

    /// Decodes the instruction starting at `bytes[at]`.
    pub fn decode(&self, bytes: &[u8], at: usize) -> Result<Decoded, DecodeError> {
        let byte = *bytes.get(at).ok_or(DecodeError::Truncated { offset: at })?;
        let enc = self.decode_table[byte as usize]
            .map(|i| &self.encodings[i])
            .ok_or(DecodeError::UnknownOpcode { offset: at, byte })?;
        let offsets = self.operand_offsets(&enc.modes);
        let len = 1 + enc
            .modes
            .iter()
            .map(|&m| self.mode(m).reg_bytes as usize + self.mode(m).ext_size as usize)
            .sum::<usize>();
        if at + len > bytes.len() {
            return Err(DecodeError::Truncated { offset: at });
        }
        let ins = &bytes[at..at + len];
        let mut operands = Vec::with_capacity(enc.modes.len());
        for (&m, &off) in enc.modes.iter().zip(&offsets) {
            let md = self.mode(m);
            if md.reg_bytes > 0 {
                let r = ins[off];
                if r >= sdm1::NUM_REGS {
                    return Err(DecodeError::BadRegister { offset: at + off, reg: r });
                }
                operands.push(RawOperand::reg(r));
                continue;
            }
            let value = match md.ext_size {
                0 => 0,
                1 => ins[off] as i8 as i32 as u32,
                2 => i16::from_le_bytes([ins[off], ins[off + 1]]) as i32 as u32,
                _ => u32::from_le_bytes([ins[off], ins[off + 1], ins[off + 2], ins[off + 3]]),
            };
            operands.push(RawOperand { mode: m, reg: None, value });
        }
        Ok(Decoded { opc: enc.opc, len, operands, offsets })
    }

    /// Encodes an instruction. Displacement values must already fit their width.
    pub fn encode(&self, opc: OpcId, operands: &[RawOperand]) -> Result<Vec<u8>, IsaError> {
        let modes: Vec<ModeId> = operands.iter().map(|o| o.mode).collect();
        let len = self.instr_size(opc, &modes)?;
        let byte = self
            .encoding_for(opc, &modes)
            .ok_or_else(|| IsaError::NoEncoding(self.describe(opc, &modes)))?;
        let mut out = vec![0u8; len];
        out[0] = byte;
        for (op, off) in operands.iter().zip(self.operand_offsets(&modes)) {
            let md = self.mode(op.mode);
            if md.reg_bytes > 0 {
                out[off] = op.reg.unwrap_or(0);
                continue;
            }
            let bytes = op.value.to_le_bytes();
            out[off..off + md.ext_size as usize].copy_from_slice(&bytes[..md.ext_size as usize]);
        }
        Ok(out)
    }

    /// `jsr.abs` style rendering used in listings and errors.
    pub fn describe(&self, opc: OpcId, modes: &[ModeId]) -> String {
        let mut s = self.opcode(opc).name.to_string();
        for m in modes {
            s.push('.');
            s.push_str(self.mode(*m).name);
        }
        s
    }
}

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(ArchSpec::sdm1().modes.get(self.index()).map_or("?", |m| m.name))
    }
}

impl fmt::Display for OpcId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(ArchSpec::sdm1().opcodes.get(self.index()).map_or("?", |o| o.name))
    }
}

fn build_sdm1() -> ArchSpec {
    use sdm1::*;

    let addr_oec = vec![AM_ABS, AM_D16, AM_D8];
    let mode = |id, name, ext_size, reg_bytes, speed, oec: Vec<ModeId>, span, pc_relative| {
        ModeDescriptor { id, name, ext_size, reg_bytes, speed, oec, span, pc_relative }
    };
    let modes = vec![
        mode(AM_D8, "d8", 1, 0, 1, addr_oec.clone(), SpanKind::D8, true),
        mode(AM_D16, "d16", 2, 0, 2, addr_oec.clone(), SpanKind::D16, true),
        mode(AM_ABS, "abs", 4, 0, 4, addr_oec.clone(), SpanKind::None, false),
        mode(AM_REG, "reg", 0, 1, 0, vec![AM_REG], SpanKind::None, false),
        mode(AM_IMM32, "imm32", 4, 0, 2, vec![AM_IMM32], SpanKind::None, false),
    ];

    let addr = || vec![AM_ABS, AM_D16, AM_D8];
    let reg = || vec![AM_REG];
    let imm = || vec![AM_IMM32];
    struct Row(OpcId, &'static str, u8, Vec<Vec<ModeId>>, Vec<bool>, Vec<bool>);
    let rows = vec![
        Row(O_HALT, "halt", 2, vec![], vec![], vec![]),
        Row(O_NOP, "nop", 2, vec![], vec![], vec![]),
        Row(O_RET, "ret", 4, vec![], vec![], vec![]),
        Row(O_JMP, "jmp", 2, vec![addr()], vec![true], vec![false]),
        Row(O_JSR, "jsr", 4, vec![addr()], vec![true], vec![false]),
        Row(O_BEQ, "beq", 2, vec![addr()], vec![true], vec![false]),
        Row(O_BNE, "bne", 2, vec![addr()], vec![true], vec![false]),
        Row(O_LEA, "lea", 2, vec![addr(), reg()], vec![true, false], vec![false, true]),
        Row(O_LD, "ld", 2, vec![addr(), reg()], vec![true, false], vec![false, true]),
        Row(O_ST, "st", 2, vec![addr(), reg()], vec![false, true], vec![true, false]),
        Row(O_LDI, "ldi", 2, vec![reg(), imm()], vec![false, true], vec![true, false]),
        Row(O_MOV, "mov", 2, vec![reg(), reg()], vec![false, true], vec![true, false]),
        Row(O_ADD, "add", 2, vec![reg(), reg()], vec![true, true], vec![true, false]),
        Row(O_SUB, "sub", 2, vec![reg(), reg()], vec![true, true], vec![true, false]),
        Row(O_CMP, "cmp", 2, vec![reg(), reg()], vec![true, true], vec![false, false]),
        Row(O_ADDI, "addi", 2, vec![reg(), imm()], vec![true, true], vec![true, false]),
        Row(O_PUSH, "push", 2, vec![reg()], vec![true], vec![false]),
        Row(O_POP, "pop", 2, vec![reg()], vec![false], vec![true]),
        Row(O_OUT, "out", 2, vec![reg()], vec![true], vec![false]),
        Row(O_IN, "in", 2, vec![reg()], vec![false], vec![true]),
    ];
    let opcodes = rows
        .into_iter()
        .map(|Row(id, name, speed, class, source, dest)| OpcodeDescriptor {
            id,
            name,
            speed,
            iec_next: None,
            class,
            source,
            dest,
        })
        .collect();

    let enc = |byte, opc, modes: &[ModeId]| Encoding { byte, opc, modes: modes.to_vec() };
    let mut encodings = vec![enc(0x00, O_HALT, &[]), enc(0x01, O_NOP, &[]), enc(0x02, O_RET, &[])];
    for (base, opc) in [(0x10, O_JMP), (0x14, O_JSR), (0x18, O_BEQ), (0x1C, O_BNE)] {
        encodings.push(enc(base, opc, &[AM_ABS]));
        encodings.push(enc(base + 1, opc, &[AM_D16]));
        encodings.push(enc(base + 2, opc, &[AM_D8]));
    }
    for (base, opc) in [(0x20, O_LEA), (0x24, O_LD), (0x28, O_ST)] {
        encodings.push(enc(base, opc, &[AM_ABS, AM_REG]));
        encodings.push(enc(base + 1, opc, &[AM_D16, AM_REG]));
        encodings.push(enc(base + 2, opc, &[AM_D8, AM_REG]));
    }
    encodings.push(enc(0x2C, O_LDI, &[AM_REG, AM_IMM32]));
    encodings.push(enc(0x30, O_MOV, &[AM_REG, AM_REG]));
    encodings.push(enc(0x31, O_ADD, &[AM_REG, AM_REG]));
    encodings.push(enc(0x32, O_SUB, &[AM_REG, AM_REG]));
    encodings.push(enc(0x33, O_CMP, &[AM_REG, AM_REG]));
    encodings.push(enc(0x34, O_ADDI, &[AM_REG, AM_IMM32]));
    encodings.push(enc(0x38, O_OUT, &[AM_REG]));
    encodings.push(enc(0x39, O_IN, &[AM_REG]));
    encodings.push(enc(0x3A, O_PUSH, &[AM_REG]));
    encodings.push(enc(0x3B, O_POP, &[AM_REG]));

    ArchSpec::new("sdm1", modes, opcodes, SpanTable::SDM1, encodings).expect("sdm1 tables are consistent")
}
