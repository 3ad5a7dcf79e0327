use thiserror::Error;

use crate::ir::{NodeId, Program, TextNode};
use crate::isa::{ArchSpec, ModeId, OpcId, SpanKind};

/// One (opcode, mode) substitution for the scrutinized operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TranslateEntry {
    pub opc: OpcId,
    pub mode: ModeId,
}

pub const MAX_LENGTHEN_PASSES: u32 = 8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LengthenStats {
    /// Passes including the last one, which changes nothing.
    pub passes: u32,
    pub bytes_added: u32,
    pub expansions: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LengthenError {
    #[error("no translation of {instr} at {iaddr:#x} reaches its target")]
    NoFit { instr: String, iaddr: u32 },
    #[error("lengthen did not converge within {0} passes")]
    NoConvergence(u32),
}

/// Pairs that may replace operand `opnum` of `instr`: opcodes from its
/// equivalence ring under which the other operands stay legal, crossed with
/// the legal modes equivalent to the current one. Spans are not checked.
pub fn form_tc(arch: &ArchSpec, instr: &TextNode, opnum: usize) -> Vec<TranslateEntry> {
    let cur = instr.ops[opnum].mode;
    let oec = arch.operand_equiv_class(cur).expect("operand modes come from the tables");
    let mut out = Vec::new();
    for opc in arch.opcode_equiv_class(instr.opc).expect("opcode comes from the tables") {
        let d = arch.opcode(opc);
        if d.noper() != instr.ops.len() {
            continue;
        }
        let others_ok = instr
            .ops
            .iter()
            .enumerate()
            .all(|(k, op)| k == opnum || d.class[k].contains(&op.mode));
        if !others_ok {
            continue;
        }
        for &mode in &d.class[opnum] {
            if oec.contains(&mode) {
                out.push(TranslateEntry { opc, mode });
            }
        }
    }
    out
}

pub fn cost(arch: &ArchSpec, e: TranslateEntry) -> u32 {
    arch.cost(e.opc, e.mode)
}

fn cheapest(arch: &ArchSpec, entries: impl Iterator<Item = TranslateEntry>) -> Option<TranslateEntry> {
    entries.min_by_key(|&e| (cost(arch, e), e.mode, e.opc))
}

fn install(arch: &ArchSpec, t: &mut TextNode, opnum: usize, e: TranslateEntry) {
    t.opc = e.opc;
    t.ops[opnum].mode = e.mode;
    t.relayout(arch);
}

/// Installs the cheapest translation of every relocatable operand, ignoring
/// spans. Returns bytes saved.
pub fn minimize(arch: &ArchSpec, prog: &mut Program) -> u32 {
    let before = prog.text_size();
    for n in prog.flat() {
        let Some(t) = prog.text_mut(n) else { continue };
        for k in 0..t.ops.len() {
            if !t.ops[k].is_relocatable() {
                continue;
            }
            if let Some(best) = cheapest(arch, form_tc(arch, t, k).into_iter()) {
                install(arch, t, k, best);
            }
        }
    }
    before - prog.text_size()
}

/// Lays nodes out back to back from the load address in `next` order; the data
/// node follows the text.
pub fn set_faddr(prog: &mut Program) {
    let mut at = prog.load_addr;
    for n in prog.flat() {
        let node = prog.node_mut(n);
        node.set_faddr(at);
        at = at.wrapping_add(node.nbytes());
    }
}

/// Signed distance from the instruction start to the operand's final target.
fn range(prog: &Program, n: NodeId, opnum: usize) -> i64 {
    let t = prog.text(n).expect("text node");
    let fa = prog.final_address(&t.ops[opnum]).expect("relocatable operand");
    fa as i64 - t.faddr as i64
}

/// Grows out-of-span operands until every span holds at final addresses.
/// Ranges are measured against addresses fixed at the start of each pass.
pub fn lengthen(arch: &ArchSpec, prog: &mut Program) -> Result<LengthenStats, LengthenError> {
    let mut stats = LengthenStats::default();
    let start_size = prog.text_size();
    loop {
        stats.passes += 1;
        set_faddr(prog);
        let mut changed = false;
        for n in prog.flat() {
            let Some(nops) = prog.text(n).map(|t| t.ops.len()) else { continue };
            for k in 0..nops {
                let t = prog.text(n).expect("text node");
                let op = &t.ops[k];
                if !op.is_relocatable() || arch.mode(op.mode).span == SpanKind::None {
                    continue;
                }
                let r = range(prog, n, k);
                if arch.span_ok(op.mode, r) {
                    continue;
                }
                let current = TranslateEntry { opc: t.opc, mode: op.mode };
                let fits = form_tc(arch, t, k)
                    .into_iter()
                    .filter(|&e| e != current && arch.span_ok(e.mode, r));
                let best = cheapest(arch, fits).ok_or_else(|| LengthenError::NoFit {
                    instr: arch.describe(t.opc, &t.modes()),
                    iaddr: t.iaddr,
                })?;
                let old = t.nbytes;
                let t = prog.text_mut(n).expect("text node");
                install(arch, t, k, best);
                assert!(t.nbytes >= old, "lengthen shrank an instruction");
                stats.expansions += 1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        if stats.passes >= MAX_LENGTHEN_PASSES {
            return Err(LengthenError::NoConvergence(stats.passes));
        }
    }
    stats.bytes_added = prog.text_size() - start_size;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::Assembler;
    use crate::isa::sdm1::*;

    fn arch() -> &'static ArchSpec {
        ArchSpec::sdm1()
    }

    fn node(opc: OpcId, modes: &[ModeId]) -> TextNode {
        let ops = modes
            .iter()
            .map(|&mode| crate::ir::Operand { addr: None, target: None, mode, offset: 0, reg: None, value: 0 })
            .collect();
        let mut t = TextNode { opc, iaddr: 0, faddr: 0, instr: vec![], ibytes: 0, nbytes: 0, refs: 0, jsr: 0, ops };
        t.relayout(arch());
        t
    }

    #[test]
    fn translate_class_of_jsr_abs() {
        let tc = form_tc(arch(), &node(O_JSR, &[AM_ABS]), 0);
        let mut modes: Vec<ModeId> = tc.iter().map(|e| e.mode).collect();
        modes.sort();
        assert_eq!(modes, vec![AM_D8, AM_D16, AM_ABS]);
        assert!(tc.iter().all(|e| e.opc == O_JSR));
    }

    #[test]
    fn singleton_classes() {
        assert_eq!(
            form_tc(arch(), &node(O_OUT, &[AM_REG]), 0),
            vec![TranslateEntry { opc: O_OUT, mode: AM_REG }]
        );
        assert_eq!(
            form_tc(arch(), &node(O_LDI, &[AM_REG, AM_IMM32]), 1),
            vec![TranslateEntry { opc: O_LDI, mode: AM_IMM32 }]
        );
    }

    #[test]
    fn translate_class_matches_set_builder() {
        for opc in 0..20u8 {
            let opc = OpcId(opc);
            let d = arch().opcode(opc);
            if d.noper() == 0 {
                continue;
            }
            let modes: Vec<ModeId> = d.class.iter().map(|c| c[0]).collect();
            let t = node(opc, &modes);
            for k in 0..d.noper() {
                let mut expect = Vec::new();
                for o2 in 0..20u8 {
                    for m2 in 0..5u8 {
                        let (o2, m2) = (OpcId(o2), ModeId(m2));
                        let d2 = arch().opcode(o2);
                        let in_ring = arch().opcode_equiv_class(opc).unwrap().contains(&o2);
                        let addressing = d2.noper() == d.noper()
                            && (0..d.noper()).all(|j| d2.class[j].contains(if j == k { &m2 } else { &modes[j] }));
                        let semantic = arch().operand_equiv_class(modes[k]).unwrap().contains(&m2);
                        if in_ring && addressing && semantic {
                            expect.push(TranslateEntry { opc: o2, mode: m2 });
                        }
                    }
                }
                let mut got = form_tc(arch(), &t, k);
                got.sort_by_key(|e| (e.opc, e.mode));
                assert_eq!(got, expect, "{}", d.name);
            }
        }
    }

    #[test]
    fn cost_table_values() {
        let c = |m| cost(arch(), TranslateEntry { opc: O_JSR, mode: m });
        assert_eq!(c(AM_D16), 8);
        assert_eq!(c(AM_D8), 6);
        assert_eq!(c(AM_ABS), 12);
        for opc in 0..20u8 {
            let e = |m| cost(arch(), TranslateEntry { opc: OpcId(opc), mode: m });
            assert!(e(AM_D8) < e(AM_D16) && e(AM_D16) < e(AM_ABS));
        }
    }

    fn program(gap: usize) -> Program {
        let mut a = Assembler::new(0);
        a.label("main");
        a.jsr_abs("f");
        a.halt();
        for _ in 0..gap {
            a.nop();
        }
        a.label("f");
        a.jsr_abs("main");
        a.ret();
        Program::build(arch(), &a.finish("main").unwrap()).unwrap()
    }

    #[test]
    fn minimize_then_lengthen_near() {
        let mut p = program(50);
        assert_eq!(minimize(arch(), &mut p), 6);
        let s = lengthen(arch(), &mut p).unwrap();
        assert_eq!((s.passes, s.bytes_added, s.expansions), (1, 0, 0));
    }

    #[test]
    fn far_calls_expand_to_d16_and_converge() {
        let mut p = program(4000);
        minimize(arch(), &mut p);
        let s = lengthen(arch(), &mut p).unwrap();
        assert_eq!((s.passes, s.expansions, s.bytes_added), (2, 2, 2));
        for n in p.flat() {
            if let Some(t) = p.text(n) {
                if t.opc == O_JSR {
                    assert_eq!(t.ops[0].mode, AM_D16);
                }
            }
        }
    }
}
