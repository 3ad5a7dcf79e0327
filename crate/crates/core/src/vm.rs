//! Reference emulator for SDM-1, used to check that optimized task files
//! behave like their inputs.

use std::fmt;

use thiserror::Error;

use crate::isa::{sdm1::*, ArchSpec, Decoded};
use crate::taskfile::{TaskFile, TaskFileError};

/// Offset from the load address to the initial stack pointer.
pub const STACK_TOP_OFFSET: u32 = 0x0010_0000;
pub const STACK_SIZE: u32 = 0x0001_0000;
pub const DEFAULT_STEP_LIMIT: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExitStatus {
    Halted,
    Timeout,
    Fault { pc: u32, reason: String },
}

impl ExitStatus {
    /// Status without fault details, which depend on final addresses.
    pub fn kind(&self) -> &'static str {
        match self {
            ExitStatus::Halted => "halted",
            ExitStatus::Timeout => "timeout",
            ExitStatus::Fault { .. } => "fault",
        }
    }
}

impl fmt::Display for ExitStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExitStatus::Fault { pc, reason } => write!(f, "fault at {pc:#010x}: {reason}"),
            other => f.write_str(other.kind()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Execution {
    pub outputs: Vec<u32>,
    pub status: ExitStatus,
    pub steps: u64,
}

#[derive(Debug, Error)]
pub enum VmError {
    #[error("invalid task file: {0}")]
    TaskFile(#[from] TaskFileError),
    #[error("text does not decode: {0}")]
    Decode(#[from] crate::isa::DecodeError),
}

struct Machine<'a> {
    tf: &'a TaskFile,
    text_start: u32,
    data_start: u32,
    stack_lo: u32,
    stack: Vec<u8>,
    data: Vec<u8>,
    /// Decoded instruction by text offset, for instruction starts only.
    decoded: Vec<Option<Decoded>>,
    regs: [u32; 16],
    z: bool,
}

fn offset_in(addr: u32, start: u32, len: usize) -> Option<usize> {
    let off = addr.wrapping_sub(start) as usize;
    (off < len).then_some(off)
}

impl<'a> Machine<'a> {
    fn new(arch: &ArchSpec, tf: &'a TaskFile) -> Result<Machine<'a>, VmError> {
        tf.validate()?;
        let mut decoded = vec![None; tf.text.len()];
        let mut at = 0;
        while at < tf.text.len() {
            let d = arch.decode(&tf.text, at)?;
            let len = d.len;
            decoded[at] = Some(d);
            at += len;
        }
        let top = tf.load_addr.wrapping_add(STACK_TOP_OFFSET);
        let mut regs = [0; 16];
        regs[SP as usize] = top;
        Ok(Machine {
            tf,
            text_start: tf.load_addr,
            data_start: tf.data_addr(),
            stack_lo: top.wrapping_sub(STACK_SIZE),
            stack: vec![0; STACK_SIZE as usize],
            data: tf.data.clone(),
            decoded,
            regs,
            z: false,
        })
    }

    fn read_byte(&self, addr: u32) -> u8 {
        if let Some(o) = offset_in(addr, self.data_start, self.data.len()) {
            self.data[o]
        } else if let Some(o) = offset_in(addr, self.text_start, self.tf.text.len()) {
            self.tf.text[o]
        } else if let Some(o) = offset_in(addr, self.stack_lo, self.stack.len()) {
            self.stack[o]
        } else {
            0
        }
    }

    fn read_word(&self, addr: u32) -> u32 {
        let b = |i: u32| self.read_byte(addr.wrapping_add(i));
        u32::from_le_bytes([b(0), b(1), b(2), b(3)])
    }

    fn write_word(&mut self, addr: u32, v: u32) -> Result<(), String> {
        let mut slots = [(false, 0usize); 4];
        for (i, slot) in slots.iter_mut().enumerate() {
            let a = addr.wrapping_add(i as u32);
            *slot = if let Some(o) = offset_in(a, self.data_start, self.data.len()) {
                (true, o)
            } else if offset_in(a, self.text_start, self.tf.text.len()).is_some() {
                return Err(format!("write to text at {a:#010x}"));
            } else if let Some(o) = offset_in(a, self.stack_lo, self.stack.len()) {
                (false, o)
            } else {
                return Err(format!("write to unmapped {a:#010x}"));
            };
        }
        for ((in_data, o), byte) in slots.into_iter().zip(v.to_le_bytes()) {
            if in_data {
                self.data[o] = byte;
            } else {
                self.stack[o] = byte;
            }
        }
        Ok(())
    }

    fn run(&mut self, arch: &ArchSpec, input: &[u32], step_limit: u64) -> Execution {
        let mut outputs = Vec::new();
        let mut input = input.iter().copied();
        let mut pc = self.tf.entry;
        let mut steps = 0;
        let status = loop {
            if steps >= step_limit {
                break ExitStatus::Timeout;
            }
            let fault = |reason: String| ExitStatus::Fault { pc, reason };
            let Some(d) = offset_in(pc, self.text_start, self.tf.text.len())
                .and_then(|o| self.decoded[o].clone())
            else {
                break fault("not an instruction start".into());
            };
            steps += 1;
            let next = pc.wrapping_add(d.len as u32);
            let ea = |k: usize| {
                let op = &d.operands[k];
                if arch.mode(op.mode).pc_relative {
                    (pc as i64 + PC_BIAS + op.value as i32 as i64) as u32
                } else {
                    op.value
                }
            };
            let reg = |k: usize| d.operands[k].reg.expect("register operand") as usize;
            let mut new_pc = next;
            match d.opc {
                O_HALT => break ExitStatus::Halted,
                O_NOP => {}
                O_RET => {
                    let sp = self.regs[SP as usize];
                    new_pc = self.read_word(sp);
                    self.regs[SP as usize] = sp.wrapping_add(4);
                }
                O_JMP => new_pc = ea(0),
                O_JSR => {
                    let sp = self.regs[SP as usize].wrapping_sub(4);
                    if let Err(e) = self.write_word(sp, next) {
                        break fault(e);
                    }
                    self.regs[SP as usize] = sp;
                    new_pc = ea(0);
                }
                O_BEQ => {
                    if self.z {
                        new_pc = ea(0);
                    }
                }
                O_BNE => {
                    if !self.z {
                        new_pc = ea(0);
                    }
                }
                O_LEA => self.regs[reg(1)] = ea(0),
                O_LD => self.regs[reg(1)] = self.read_word(ea(0)),
                O_ST => {
                    if let Err(e) = self.write_word(ea(0), self.regs[reg(1)]) {
                        break fault(e);
                    }
                }
                O_LDI => self.regs[reg(0)] = d.operands[1].value,
                O_MOV => self.regs[reg(0)] = self.regs[reg(1)],
                O_ADD | O_SUB | O_CMP | O_ADDI => {
                    let a = self.regs[reg(0)];
                    let b = if d.opc == O_ADDI { d.operands[1].value } else { self.regs[reg(1)] };
                    let r = match d.opc {
                        O_ADD | O_ADDI => a.wrapping_add(b),
                        _ => a.wrapping_sub(b),
                    };
                    self.z = r == 0;
                    if d.opc != O_CMP {
                        self.regs[reg(0)] = r;
                    }
                }
                O_PUSH => {
                    let sp = self.regs[SP as usize].wrapping_sub(4);
                    if let Err(e) = self.write_word(sp, self.regs[reg(0)]) {
                        break fault(e);
                    }
                    self.regs[SP as usize] = sp;
                }
                O_POP => {
                    let sp = self.regs[SP as usize];
                    self.regs[reg(0)] = self.read_word(sp);
                    self.regs[SP as usize] = sp.wrapping_add(4);
                }
                O_OUT => outputs.push(self.regs[reg(0)]),
                O_IN => self.regs[reg(0)] = input.next().unwrap_or(0),
                other => break fault(format!("unhandled opcode {other}")),
            }
            pc = new_pc;
        };
        Execution { outputs, status, steps }
    }
}

/// Runs `tf` on `input` for at most `step_limit` instructions.
pub fn execute(tf: &TaskFile, input: &[u32], step_limit: u64) -> Result<Execution, VmError> {
    let arch = ArchSpec::sdm1();
    let mut m = Machine::new(arch, tf)?;
    Ok(m.run(arch, input, step_limit))
}

/// First input on which two programs disagree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub input: Vec<u32>,
    pub left: Execution,
    pub right: Execution,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "input {:?}: {:?} ({}) vs {:?} ({})",
            self.input, self.left.outputs, self.left.status, self.right.outputs, self.right.status
        )
    }
}

/// Compares outputs and exit status kind on every input vector.
pub fn compare(
    a: &TaskFile,
    b: &TaskFile,
    inputs: &[Vec<u32>],
    step_limit: u64,
) -> Result<Option<Mismatch>, VmError> {
    for input in inputs {
        let left = execute(a, input, step_limit)?;
        let right = execute(b, input, step_limit)?;
        if left.outputs != right.outputs || left.status.kind() != right.status.kind() {
            return Ok(Some(Mismatch { input: input.clone(), left, right }));
        }
    }
    Ok(None)
}

pub fn equivalent(a: &TaskFile, b: &TaskFile, inputs: &[Vec<u32>], step_limit: u64) -> Result<bool, VmError> {
    Ok(compare(a, b, inputs, step_limit)?.is_none())
}
