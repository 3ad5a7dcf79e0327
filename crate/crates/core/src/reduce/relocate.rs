use thiserror::Error;

use crate::ir::{Node, NodeId, Program};
use crate::isa::{sdm1, ArchSpec, IsaError, RawOperand};
use crate::taskfile::{RelocEntry, Segment, Symbol, TaskFile};

use super::translate::set_faddr;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelocateError {
    #[error("data word at offset {offset:#x} points inside the instruction at {iaddr:#x}")]
    DataInteriorReference { offset: u32, iaddr: u32 },
    #[error("data word at offset {offset:#x} points into eliminated code")]
    DataReferenceRemoved { offset: u32 },
    #[error("displacement {disp} does not fit {instr} at {faddr:#x}")]
    Displacement { instr: String, faddr: u32, disp: i64 },
    #[error(transparent)]
    Encode(#[from] IsaError),
}

fn map_addr(prog: &Program, target: NodeId, addr: u32) -> u32 {
    let t = prog.node(target);
    t.faddr().wrapping_add(addr.wrapping_sub(t.iaddr()))
}

fn map_symbol(prog: &Program, s: &Symbol, input_end: u32) -> Option<u32> {
    if let Some(n) = prog.find_node(s.value) {
        return Some(map_addr(prog, n, s.value));
    }
    let d = prog.node(prog.data_node);
    let in_data = s.value >= d.iaddr() && (s.value as u64) <= d.iaddr() as u64 + d.nbytes() as u64;
    if in_data {
        return Some(map_addr(prog, prog.data_node, s.value));
    }
    let outside = s.value < prog.load_addr || s.value > input_end;
    // Anything else sat inside eliminated code.
    outside.then_some(s.value)
}

/// Installs final encodings, rewrites data address words, and produces the
/// output task file.
pub fn relocate(arch: &ArchSpec, prog: &mut Program, input: &TaskFile) -> Result<TaskFile, RelocateError> {
    set_faddr(prog);
    let flat = prog.flat();

    let mut text = Vec::new();
    for &n in &flat {
        let Some(t) = prog.text(n) else { continue };
        let mut raw = Vec::with_capacity(t.ops.len());
        for op in &t.ops {
            let md = arch.mode(op.mode);
            if md.reg_bytes > 0 {
                raw.push(RawOperand::reg(op.reg.unwrap_or(0)));
                continue;
            }
            let value = match prog.final_address(op) {
                None => op.value,
                Some(fa) if md.pc_relative => {
                    let disp = fa as i64 - (t.faddr as i64 + sdm1::PC_BIAS);
                    let bits = 8 * md.ext_size as u32;
                    let lim = 1i64 << (bits - 1);
                    if !(-lim..lim).contains(&disp) {
                        return Err(RelocateError::Displacement {
                            instr: arch.describe(t.opc, &t.modes()),
                            faddr: t.faddr,
                            disp,
                        });
                    }
                    disp as i32 as u32
                }
                Some(fa) => fa,
            };
            raw.push(RawOperand::ext(op.mode, value));
        }
        text.extend(arch.encode(t.opc, &raw)?);
    }

    let Node::Data(d) = prog.node(prog.data_node) else { unreachable!("data node") };
    let mut data = d.bytes.clone();
    for dr in &prog.data_relocs {
        if prog.is_removed(dr.target) {
            return Err(RelocateError::DataReferenceRemoved { offset: dr.offset });
        }
        let tn = prog.node(dr.target);
        if !tn.is_data() && tn.iaddr() != dr.value {
            return Err(RelocateError::DataInteriorReference { offset: dr.offset, iaddr: tn.iaddr() });
        }
        let v = map_addr(prog, dr.target, dr.value);
        let o = dr.offset as usize;
        data[o..o + 4].copy_from_slice(&v.to_le_bytes());
    }

    // Output relocations: surviving input entries in input order, then
    // operands that became absolute, in layout order.
    let is_abs_word = |n: NodeId, k: usize| {
        let op = &prog.text(n).expect("text node").ops[k];
        op.is_relocatable() && arch.mode(op.mode).ext_size == 4 && !arch.mode(op.mode).pc_relative
    };
    let text_off = |n: NodeId, k: usize| {
        let t = prog.text(n).expect("text node");
        t.faddr.wrapping_sub(prog.load_addr) + t.ops[k].offset as u32
    };
    let mut from_input: Vec<Option<RelocEntry>> = vec![None; input.relocs.len()];
    let mut covered = std::collections::HashSet::new();
    for tr in &prog.text_relocs {
        if prog.is_removed(tr.node) || tr.opnum >= prog.text(tr.node).map_or(0, |t| t.ops.len()) {
            continue;
        }
        if is_abs_word(tr.node, tr.opnum) {
            from_input[tr.index] = Some(RelocEntry { segment: Segment::Text, offset: text_off(tr.node, tr.opnum) });
            covered.insert((tr.node, tr.opnum));
        }
    }
    for dr in &prog.data_relocs {
        from_input[dr.index] = Some(RelocEntry { segment: Segment::Data, offset: dr.offset });
    }
    let mut relocs: Vec<RelocEntry> = from_input.into_iter().flatten().collect();
    for &n in &flat {
        let Some(t) = prog.text(n) else { continue };
        for k in 0..t.ops.len() {
            if is_abs_word(n, k) && !covered.contains(&(n, k)) {
                relocs.push(RelocEntry { segment: Segment::Text, offset: text_off(n, k) });
            }
        }
    }

    let input_end = input.data_addr().wrapping_add(input.data.len() as u32);
    let symbols = input
        .symbols
        .iter()
        .filter_map(|s| map_symbol(prog, s, input_end).map(|value| Symbol { value, ..s.clone() }))
        .collect();

    let entry = match prog.entry {
        Some(e) => prog.node(e).faddr(),
        None => prog.load_addr,
    };
    Ok(TaskFile { load_addr: prog.load_addr, entry, text, data, relocs, symbols })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{Assembler, Ref};
    use crate::reduce::{lengthen, minimize};

    fn arch() -> &'static ArchSpec {
        ArchSpec::sdm1()
    }

    #[test]
    fn identity_relocation_is_byte_exact() {
        let mut a = Assembler::new(0x2000);
        a.label("main");
        a.jsr_abs("f");
        a.ld(Ref::label("tbl"), 1);
        a.ldi_addr(2, Ref::at("tbl", 4));
        a.halt();
        a.label("f");
        a.ret();
        a.data_label("tbl");
        a.data_ptr(Ref::label("f"));
        a.data_word(9);
        let tf = a.finish("main").unwrap();
        let mut p = Program::build(arch(), &tf).unwrap();
        assert_eq!(relocate(arch(), &mut p, &tf).unwrap(), tf);
    }

    #[test]
    fn fig_2_1_call_reduced_to_d16() {
        let mut a = Assembler::new(0x0A00);
        a.label("main");
        a.jsr_abs("S");
        a.halt();
        for _ in 0..600 {
            a.nop();
        }
        a.label("S");
        a.ret();
        let tf = a.finish("main").unwrap();
        let mut p = Program::build(arch(), &tf).unwrap();
        minimize(arch(), &mut p);
        lengthen(arch(), &mut p).unwrap();
        let out = relocate(arch(), &mut p, &tf).unwrap();
        // S moves from 0x0A00 + 5 + 1 + 600 to 3 bytes earlier
        let s_final = 0x0A00 + 3 + 1 + 600;
        assert_eq!(out.text[0], 0x15);
        let disp = i16::from_le_bytes([out.text[1], out.text[2]]) as i64;
        assert_eq!(disp, s_final - 0x0A00 - 2);
        assert!(out.relocs.is_empty());
        let s = out.symbols.iter().find(|s| s.name == "S").unwrap();
        assert_eq!(s.value as i64, s_final);
    }

    #[test]
    fn data_pointer_into_instruction_interior_is_rejected() {
        let mut a = Assembler::new(0);
        a.label("main");
        a.ldi(0, 1);
        a.halt();
        a.data_ptr(Ref::at("main", 2));
        let tf = a.finish("main").unwrap();
        let mut p = Program::build(arch(), &tf).unwrap();
        assert_eq!(
            relocate(arch(), &mut p, &tf),
            Err(RelocateError::DataInteriorReference { offset: 0, iaddr: 0 })
        );
    }
}
