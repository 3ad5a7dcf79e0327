//! A small label-based assembler for SDM-1, used to build test programs and by
//! the corpus generator.
//!
//! Address operands may be given a fixed mode or left to relaxation, which
//! starts every such operand at d8 and widens it until all spans fit.

use std::collections::HashMap;

use thiserror::Error;

use crate::isa::{sdm1::*, ArchSpec, ModeId, OpcId, RawOperand};
use crate::taskfile::{RelocEntry, Segment, Symbol, TaskFile};

/// A label plus byte offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ref {
    pub label: String,
    pub offset: i32,
}

impl Ref {
    pub fn label(name: &str) -> Ref {
        Ref { label: name.to_string(), offset: 0 }
    }

    pub fn at(name: &str, offset: i32) -> Ref {
        Ref { label: name.to_string(), offset }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AsmOperand {
    Reg(u8),
    Imm(u32),
    /// Immediate holding a relocatable address.
    ImmRef(Ref),
    /// Memory address with a fixed mode.
    Addr(Ref, ModeId),
    /// Memory address sized by relaxation.
    AddrAuto(Ref),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum DataItem {
    Word(u32),
    Ptr(Ref),
    Zeros(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Place {
    /// Index of the instruction the label precedes.
    Text(usize),
    /// Byte offset into the data segment.
    Data(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmError {
    #[error("undefined label {0}")]
    Undefined(String),
    #[error("duplicate label {0}")]
    Duplicate(String),
    #[error("{0}")]
    Encode(String),
}

#[derive(Debug, Clone)]
pub struct Assembler {
    load_addr: u32,
    instrs: Vec<(OpcId, Vec<AsmOperand>)>,
    data: Vec<DataItem>,
    data_len: u32,
    labels: HashMap<String, Place>,
    label_order: Vec<String>,
    duplicate: Option<String>,
}

fn next_wider(m: ModeId) -> ModeId {
    match m {
        AM_D8 => AM_D16,
        _ => AM_ABS,
    }
}

impl Assembler {
    pub fn new(load_addr: u32) -> Assembler {
        Assembler {
            load_addr,
            instrs: Vec::new(),
            data: Vec::new(),
            data_len: 0,
            labels: HashMap::new(),
            label_order: Vec::new(),
            duplicate: None,
        }
    }

    fn define(&mut self, name: &str, place: Place) {
        if self.labels.insert(name.to_string(), place).is_some() {
            self.duplicate.get_or_insert_with(|| name.to_string());
        } else {
            self.label_order.push(name.to_string());
        }
    }

    /// Labels the next instruction.
    pub fn label(&mut self, name: &str) {
        self.define(name, Place::Text(self.instrs.len()));
    }

    /// Labels the next data byte.
    pub fn data_label(&mut self, name: &str) {
        self.define(name, Place::Data(self.data_len));
    }

    /// Address of the next instruction, counting relaxed operands at d8.
    pub fn here(&self) -> u32 {
        let modes = self.initial_modes();
        let sizes: u32 = self.instr_sizes(&modes).iter().sum();
        self.load_addr.wrapping_add(sizes)
    }

    pub fn text_len(&self) -> usize {
        self.instrs.len()
    }

    pub fn instr(&mut self, opc: OpcId, ops: Vec<AsmOperand>) {
        self.instrs.push((opc, ops));
    }

    pub fn halt(&mut self) {
        self.instr(O_HALT, vec![]);
    }
    pub fn nop(&mut self) {
        self.instr(O_NOP, vec![]);
    }
    pub fn ret(&mut self) {
        self.instr(O_RET, vec![]);
    }
    pub fn jmp(&mut self, to: &str) {
        self.instr(O_JMP, vec![AsmOperand::AddrAuto(Ref::label(to))]);
    }
    pub fn jmp_abs(&mut self, to: &str) {
        self.instr(O_JMP, vec![AsmOperand::Addr(Ref::label(to), AM_ABS)]);
    }
    pub fn jmp_abs_at(&mut self, at: Ref) {
        self.instr(O_JMP, vec![AsmOperand::Addr(at, AM_ABS)]);
    }
    pub fn jsr(&mut self, to: &str) {
        self.instr(O_JSR, vec![AsmOperand::AddrAuto(Ref::label(to))]);
    }
    pub fn jsr_abs(&mut self, to: &str) {
        self.instr(O_JSR, vec![AsmOperand::Addr(Ref::label(to), AM_ABS)]);
    }
    pub fn beq(&mut self, to: &str) {
        self.instr(O_BEQ, vec![AsmOperand::AddrAuto(Ref::label(to))]);
    }
    pub fn bne(&mut self, to: &str) {
        self.instr(O_BNE, vec![AsmOperand::AddrAuto(Ref::label(to))]);
    }
    pub fn lea(&mut self, at: Ref, r: u8) {
        self.instr(O_LEA, vec![AsmOperand::AddrAuto(at), AsmOperand::Reg(r)]);
    }
    pub fn ld(&mut self, at: Ref, r: u8) {
        self.instr(O_LD, vec![AsmOperand::AddrAuto(at), AsmOperand::Reg(r)]);
    }
    pub fn st(&mut self, at: Ref, r: u8) {
        self.instr(O_ST, vec![AsmOperand::AddrAuto(at), AsmOperand::Reg(r)]);
    }
    pub fn ldi(&mut self, r: u8, v: u32) {
        self.instr(O_LDI, vec![AsmOperand::Reg(r), AsmOperand::Imm(v)]);
    }
    pub fn ldi_addr(&mut self, r: u8, at: Ref) {
        self.instr(O_LDI, vec![AsmOperand::Reg(r), AsmOperand::ImmRef(at)]);
    }
    pub fn mov(&mut self, rd: u8, rs: u8) {
        self.instr(O_MOV, vec![AsmOperand::Reg(rd), AsmOperand::Reg(rs)]);
    }
    pub fn add(&mut self, rd: u8, rs: u8) {
        self.instr(O_ADD, vec![AsmOperand::Reg(rd), AsmOperand::Reg(rs)]);
    }
    pub fn sub(&mut self, rd: u8, rs: u8) {
        self.instr(O_SUB, vec![AsmOperand::Reg(rd), AsmOperand::Reg(rs)]);
    }
    pub fn cmp(&mut self, rd: u8, rs: u8) {
        self.instr(O_CMP, vec![AsmOperand::Reg(rd), AsmOperand::Reg(rs)]);
    }
    pub fn addi(&mut self, r: u8, v: u32) {
        self.instr(O_ADDI, vec![AsmOperand::Reg(r), AsmOperand::Imm(v)]);
    }
    pub fn push(&mut self, r: u8) {
        self.instr(O_PUSH, vec![AsmOperand::Reg(r)]);
    }
    pub fn pop(&mut self, r: u8) {
        self.instr(O_POP, vec![AsmOperand::Reg(r)]);
    }
    pub fn out(&mut self, r: u8) {
        self.instr(O_OUT, vec![AsmOperand::Reg(r)]);
    }
    pub fn input(&mut self, r: u8) {
        self.instr(O_IN, vec![AsmOperand::Reg(r)]);
    }

    pub fn data_word(&mut self, v: u32) {
        self.data.push(DataItem::Word(v));
        self.data_len += 4;
    }

    /// A data word holding a relocatable address.
    pub fn data_ptr(&mut self, at: Ref) {
        self.data.push(DataItem::Ptr(at));
        self.data_len += 4;
    }

    pub fn data_zeros(&mut self, n: u32) {
        self.data.push(DataItem::Zeros(n));
        self.data_len += n;
    }

    fn initial_modes(&self) -> Vec<Vec<ModeId>> {
        self.instrs
            .iter()
            .map(|(_, ops)| {
                ops.iter()
                    .map(|o| match o {
                        AsmOperand::Reg(_) => AM_REG,
                        AsmOperand::Imm(_) | AsmOperand::ImmRef(_) => AM_IMM32,
                        AsmOperand::Addr(_, m) => *m,
                        AsmOperand::AddrAuto(_) => AM_D8,
                    })
                    .collect()
            })
            .collect()
    }

    fn instr_sizes(&self, modes: &[Vec<ModeId>]) -> Vec<u32> {
        let arch = ArchSpec::sdm1();
        self.instrs
            .iter()
            .zip(modes)
            .map(|((opc, _), m)| arch.instr_size(*opc, m).map_or(1, |s| s as u32))
            .collect()
    }

    fn resolve(&self, r: &Ref, iaddrs: &[u32], text_end: u32) -> Result<u32, AsmError> {
        let place = self.labels.get(&r.label).ok_or_else(|| AsmError::Undefined(r.label.clone()))?;
        let base = match *place {
            Place::Text(i) => iaddrs.get(i).copied().unwrap_or(text_end),
            Place::Data(off) => text_end.wrapping_add(off),
        };
        Ok(base.wrapping_add(r.offset as u32))
    }

    /// Relaxes, encodes and packages the program with `entry` as entry point.
    pub fn finish(&self, entry: &str) -> Result<TaskFile, AsmError> {
        if let Some(d) = &self.duplicate {
            return Err(AsmError::Duplicate(d.clone()));
        }
        let arch = ArchSpec::sdm1();
        let mut modes = self.initial_modes();
        let (iaddrs, text_end) = loop {
            let sizes = self.instr_sizes(&modes);
            let mut iaddrs = Vec::with_capacity(sizes.len());
            let mut at = self.load_addr;
            for s in &sizes {
                iaddrs.push(at);
                at = at.wrapping_add(*s);
            }
            let mut changed = false;
            for (i, (_, ops)) in self.instrs.iter().enumerate() {
                for (k, o) in ops.iter().enumerate() {
                    if let AsmOperand::AddrAuto(r) = o {
                        let target = self.resolve(r, &iaddrs, at)?;
                        let range = target as i64 - iaddrs[i] as i64;
                        if !arch.span_ok(modes[i][k], range) {
                            modes[i][k] = next_wider(modes[i][k]);
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break (iaddrs, at);
            }
        };

        let mut text = Vec::new();
        let mut relocs = Vec::new();
        for (i, (opc, ops)) in self.instrs.iter().enumerate() {
            let offsets = arch.operand_offsets(&modes[i]);
            let mut raw = Vec::new();
            for (k, o) in ops.iter().enumerate() {
                let m = modes[i][k];
                let r = match o {
                    AsmOperand::Reg(r) => RawOperand::reg(*r),
                    AsmOperand::Imm(v) => RawOperand::ext(m, *v),
                    AsmOperand::ImmRef(r) => {
                        relocs.push(RelocEntry { segment: Segment::Text, offset: text.len() as u32 + offsets[k] as u32 });
                        RawOperand::ext(m, self.resolve(r, &iaddrs, text_end)?)
                    }
                    AsmOperand::Addr(r, _) | AsmOperand::AddrAuto(r) => {
                        let target = self.resolve(r, &iaddrs, text_end)?;
                        if arch.mode(m).pc_relative {
                            let disp = target as i64 - iaddrs[i] as i64 - PC_BIAS;
                            RawOperand::ext(m, disp as i32 as u32)
                        } else {
                            relocs.push(RelocEntry { segment: Segment::Text, offset: text.len() as u32 + offsets[k] as u32 });
                            RawOperand::ext(m, target)
                        }
                    }
                };
                raw.push(r);
            }
            let bytes = arch.encode(*opc, &raw).map_err(|e| AsmError::Encode(e.to_string()))?;
            text.extend_from_slice(&bytes);
        }

        let mut data = Vec::new();
        for item in &self.data {
            match item {
                DataItem::Word(v) => data.extend_from_slice(&v.to_le_bytes()),
                DataItem::Ptr(r) => {
                    relocs.push(RelocEntry { segment: Segment::Data, offset: data.len() as u32 });
                    data.extend_from_slice(&self.resolve(r, &iaddrs, text_end)?.to_le_bytes());
                }
                DataItem::Zeros(n) => data.resize(data.len() + *n as usize, 0),
            }
        }

        let mut symbols = Vec::new();
        for name in &self.label_order {
            let (segment, value) = match self.labels[name] {
                Place::Text(i) => (Segment::Text, iaddrs.get(i).copied().unwrap_or(text_end)),
                Place::Data(off) => (Segment::Data, text_end.wrapping_add(off)),
            };
            symbols.push(Symbol { name: name.clone(), segment, value });
        }
        let entry = if self.instrs.is_empty() {
            self.load_addr
        } else {
            self.resolve(&Ref::label(entry), &iaddrs, text_end)?
        };
        Ok(TaskFile { load_addr: self.load_addr, entry, text, data, relocs, symbols })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relaxation_picks_shortest_fitting_mode() {
        let mut a = Assembler::new(0);
        a.label("top");
        a.jmp("near");
        for _ in 0..200 {
            a.nop();
        }
        a.label("near");
        a.jmp("top");
        let tf = a.finish("top").unwrap();
        // 200 nops push the target past the d8 window
        assert_eq!(tf.text[0], 0x11);
        assert_eq!(tf.text[203], 0x11);
        assert!(tf.relocs.is_empty());
    }

    #[test]
    fn absolute_and_pointer_operands_are_relocated() {
        let mut a = Assembler::new(0x100);
        a.label("main");
        a.jsr_abs("f");
        a.ldi_addr(1, Ref::label("tbl"));
        a.halt();
        a.label("f");
        a.ret();
        a.data_label("tbl");
        a.data_ptr(Ref::label("f"));
        let tf = a.finish("main").unwrap();
        assert_eq!(
            tf.relocs,
            vec![
                RelocEntry { segment: Segment::Text, offset: 1 },
                RelocEntry { segment: Segment::Text, offset: 7 },
                RelocEntry { segment: Segment::Data, offset: 0 },
            ]
        );
        assert_eq!(&tf.data[..], &0x10Cu32.to_le_bytes());
        assert!(tf.validate().is_ok());
    }

    #[test]
    fn undefined_and_duplicate_labels() {
        let mut a = Assembler::new(0);
        a.label("x");
        a.jmp("y");
        assert_eq!(a.finish("x").unwrap_err(), AsmError::Undefined("y".into()));
        a.label("x");
        assert_eq!(a.finish("x").unwrap_err(), AsmError::Duplicate("x".into()));
    }
}
