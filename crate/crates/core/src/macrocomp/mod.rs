//! Macro compression: repeated instruction sequences are moved into a shared
//! body ending in `ret`, and each occurrence becomes a `jsr` to it.

pub mod suffix_tree;

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::distrib::last_block_falls_through;
use crate::ir::{Node, NodeId, Operand, Program, TextNode};
use crate::isa::{sdm1, ArchSpec, ModeId, OpcId};

pub use suffix_tree::{SuffixTree, SuffixTreeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MacroMode {
    #[default]
    Off,
    Value,
    Length,
}

impl MacroMode {
    pub fn priority(self) -> Option<Priority> {
        match self {
            MacroMode::Off => None,
            MacroMode::Value => Some(Priority::Value),
            MacroMode::Length => Some(Priority::Length),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Priority {
    /// Largest savings first.
    Value,
    /// Longest sequence first.
    Length,
}

/// Instruction stream of the current layout, one token per text node plus a
/// unique terminal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokens {
    pub tokens: Vec<u32>,
    pub nodes: Vec<NodeId>,
    pub sizes: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum OperandKey {
    Raw(u32),
    Target(NodeId, u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct InstrKey {
    opc: OpcId,
    ops: Vec<(ModeId, Option<u8>, OperandKey)>,
}

fn instr_key(prog: &Program, t: &TextNode) -> InstrKey {
    let ops = t
        .ops
        .iter()
        .map(|op| {
            let k = match (op.target, op.addr) {
                (Some(n), Some(a)) => OperandKey::Target(n, a.wrapping_sub(prog.node(n).iaddr())),
                _ => OperandKey::Raw(if op.reg.is_some() { 0 } else { op.value }),
            };
            (op.mode, op.reg, k)
        })
        .collect();
    InstrKey { opc: t.opc, ops }
}

/// Interns each live instruction. Relocatable operands compare by target node
/// and offset within it, so the same reference encoded at different
/// addresses gives equal tokens.
pub fn tokenize(prog: &Program) -> Tokens {
    let mut ids: HashMap<InstrKey, u32> = HashMap::new();
    let mut out = Tokens { tokens: Vec::new(), nodes: Vec::new(), sizes: Vec::new() };
    for n in prog.flat() {
        let Some(t) = prog.text(n) else { continue };
        let next = ids.len() as u32;
        let id = *ids.entry(instr_key(prog, t)).or_insert(next);
        out.tokens.push(id);
        out.nodes.push(n);
        out.sizes.push(t.nbytes);
    }
    out.tokens.push(ids.len() as u32);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacroCandidate {
    pub tokens: Vec<u32>,
    /// Token positions of the occurrences that would be replaced.
    pub positions: Vec<usize>,
    pub length_bytes: u32,
    pub occurrences: u32,
    pub savings: i64,
}

impl MacroCandidate {
    fn rank(&self, p: Priority) -> (i64, i64, Reverse<usize>, usize) {
        let first = self.positions.first().copied().unwrap_or(usize::MAX);
        let (a, b) = match p {
            Priority::Value => (self.savings, self.length_bytes as i64),
            Priority::Length => (self.length_bytes as i64, self.savings),
        };
        (a, b, Reverse(first), self.tokens.len())
    }
}

/// Bytes saved by replacing `k` copies of a `len`-byte sequence.
pub fn savings(k: u32, len: u32, call: u32, ret: u32) -> i64 {
    k as i64 * (len as i64 - call as i64) - (len as i64 + ret as i64)
}

fn call_size(arch: &ArchSpec) -> u32 {
    arch.instr_size(sdm1::O_JSR, &[sdm1::AM_ABS]).expect("jsr.abs exists") as u32
}

fn ret_size(arch: &ArchSpec) -> u32 {
    arch.instr_size(sdm1::O_RET, &[]).expect("ret exists") as u32
}

/// Whether an instruction may sit inside a macro body.
pub fn macro_safe(t: &TextNode) -> bool {
    use sdm1::*;
    let banned = matches!(t.opc, O_JSR | O_RET | O_PUSH | O_POP | O_JMP | O_BEQ | O_BNE);
    !banned && t.ops.iter().all(|op| op.reg != Some(SP))
}

/// A candidate in the work queue, ordered by the configured priority.
#[derive(Debug, Clone)]
pub struct Queued {
    pub priority: Priority,
    pub cand: MacroCandidate,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cand.rank(self.priority).cmp(&other.cand.rank(other.priority))
    }
}

struct Ctx<'a> {
    arch: &'a ArchSpec,
    toks: &'a Tokens,
    /// Byte offset of each token; `prefix[i + 1] - prefix[i]` is its size.
    prefix: Vec<u32>,
    /// First position at or after `i` holding an instruction not allowed in
    /// a body.
    next_unsafe: Vec<usize>,
}

impl<'a> Ctx<'a> {
    fn new(arch: &'a ArchSpec, prog: &Program, toks: &'a Tokens) -> Ctx<'a> {
        let n = toks.nodes.len();
        let mut prefix = vec![0u32; n + 1];
        for i in 0..n {
            prefix[i + 1] = prefix[i] + toks.sizes[i];
        }
        let mut next_unsafe = vec![n; n + 1];
        for i in (0..n).rev() {
            let ok = prog.text(toks.nodes[i]).is_some_and(macro_safe);
            next_unsafe[i] = if ok { next_unsafe[i + 1] } else { i };
        }
        Ctx { arch, toks, prefix, next_unsafe }
    }

    fn bytes(&self, pos: usize, len: usize) -> u32 {
        self.prefix[pos + len] - self.prefix[pos]
    }

    /// Leftmost-first non-overlapping occurrences that are still available
    /// and cannot be entered anywhere but their first instruction.
    fn select(&self, prog: &Program, positions: &[usize], len: usize, consumed: &[bool]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut free_from = 0;
        for &p in positions {
            if p < free_from || consumed[p..p + len].iter().any(|&c| c) {
                continue;
            }
            let entered = self.toks.nodes[p + 1..p + len].iter().any(|&n| prog.node(n).refs() > 0);
            if entered {
                continue;
            }
            out.push(p);
            free_from = p + len;
        }
        out
    }

    fn evaluate(&self, prog: &Program, positions: &[usize], len: usize, consumed: &[bool]) -> Option<MacroCandidate> {
        let first = *positions.first()?;
        let sel = self.select(prog, positions, len, consumed);
        let bytes = self.bytes(first, len);
        let k = sel.len() as u32;
        let s = savings(k, bytes, call_size(self.arch), ret_size(self.arch));
        (k >= 2 && s > 0).then(|| MacroCandidate {
            tokens: self.toks.tokens[first..first + len].to_vec(),
            positions: sel,
            length_bytes: bytes,
            occurrences: k,
            savings: s,
        })
    }
}

/// Candidates from every repeated subsequence that passes the validity rules,
/// queued by `priority`. A candidate whose only unsafe instruction is its last
/// one is queued shortened by that instruction.
pub fn find_candidates(
    arch: &ArchSpec,
    prog: &Program,
    toks: &Tokens,
    tree: &SuffixTree,
    priority: Priority,
) -> BinaryHeap<Queued> {
    let ctx = Ctx::new(arch, prog, toks);
    let consumed = vec![false; toks.nodes.len()];
    let counts = tree.leaf_counts();
    let (call, ret) = (call_size(arch), ret_size(arch));
    let mut heap = BinaryHeap::new();
    for v in tree.internal_nodes() {
        let start = tree.label_start(v);
        let mut len = tree.depth(v);
        let safe = ctx.next_unsafe[start] - start;
        if safe + 1 == len {
            len -= 1;
        } else if safe < len {
            continue;
        }
        if len == 0 || savings(counts[v] as u32, ctx.bytes(start, len), call, ret) <= 0 {
            continue;
        }
        if let Some(cand) = ctx.evaluate(prog, &tree.occurrences(v), len, &consumed) {
            heap.push(Queued { priority, cand });
        }
    }
    heap
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacroStats {
    pub bodies: u32,
    pub calls: u32,
    pub bytes_saved: i64,
}

fn adjust_refs(prog: &mut Program, t: &TextNode, add: bool) {
    for op in &t.ops {
        let Some(target) = op.target else { continue };
        let r = prog.node_mut(target).refs_mut();
        *r = if add { *r + 1 } else { r.checked_sub(1).expect("reference counts stay consistent") };
    }
}

/// Replaces the occurrences at `positions` with calls to a new body.
fn substitute(arch: &ArchSpec, prog: &mut Program, toks: &Tokens, positions: &[usize], len: usize) {
    let src: Vec<NodeId> = toks.nodes[positions[0]..positions[0] + len].to_vec();
    let bytes: u32 = src.iter().map(|&n| prog.node(n).nbytes()).sum();
    let ret = ret_size(arch);
    let base = prog.alloc_synthetic(bytes + ret);

    let mut body = Vec::with_capacity(len + 1);
    let mut at = base;
    for &n in &src {
        let mut t = prog.text(n).expect("tokens are text nodes").clone();
        t.iaddr = at;
        t.faddr = at;
        t.ibytes = t.nbytes;
        t.refs = 0;
        t.jsr = 0;
        at += t.nbytes;
        adjust_refs(prog, &t, true);
        body.push(prog.push_node(Node::Text(t)));
    }
    let ret_node = TextNode {
        opc: sdm1::O_RET,
        iaddr: at,
        faddr: at,
        instr: arch.encode(sdm1::O_RET, &[]).expect("ret encodes"),
        ibytes: ret,
        nbytes: ret,
        refs: 0,
        jsr: 0,
        ops: Vec::new(),
    };
    body.push(prog.push_node(Node::Text(ret_node)));
    let entry = body[0];
    prog.push_text_block(body);

    for &p in positions {
        let nodes = &toks.nodes[p..p + len];
        for &n in nodes {
            let t = prog.text(n).expect("text node").clone();
            adjust_refs(prog, &t, false);
        }
        for &n in &nodes[1..] {
            prog.removed[n.index()] = true;
        }
        let call = prog.text_mut(nodes[0]).expect("text node");
        call.opc = sdm1::O_JSR;
        call.ops = vec![Operand {
            addr: Some(base),
            target: Some(entry),
            mode: sdm1::AM_ABS,
            offset: 0,
            reg: None,
            value: base,
        }];
        call.relayout(arch);
        let first = nodes[0];
        prog.text_relocs.retain(|r| r.node != first);
    }
    let Node::Text(e) = prog.node_mut(entry) else { unreachable!("body entry is text") };
    e.refs += positions.len() as u32;
    e.jsr += positions.len() as u32;
}

/// Runs the whole pass. Leaves the program alone when its last text block can
/// fall through, since bodies are laid out after it.
pub fn compress(arch: &ArchSpec, prog: &mut Program, priority: Priority) -> MacroStats {
    let mut stats = MacroStats::default();
    if last_block_falls_through(prog) {
        return stats;
    }
    let toks = tokenize(prog);
    let tree = SuffixTree::new(toks.tokens.clone()).expect("tokenize ends with a unique terminal");
    let mut heap = find_candidates(arch, prog, &toks, &tree, priority);
    let ctx = Ctx::new(arch, prog, &toks);
    let mut consumed = vec![false; toks.nodes.len()];
    let before = prog.text_size() as i64;

    while let Some(Queued { cand, .. }) = heap.pop() {
        let len = cand.tokens.len();
        let Some(now) = ctx.evaluate(prog, &cand.positions, len, &consumed) else { continue };
        if now.savings < cand.savings {
            heap.push(Queued { priority, cand: now });
            continue;
        }
        substitute(arch, prog, &toks, &now.positions, len);
        for &p in &now.positions {
            consumed[p..p + len].iter_mut().for_each(|c| *c = true);
        }
        stats.bodies += 1;
        stats.calls += now.occurrences;
        stats.bytes_saved += now.savings;
    }
    prog.compact();
    debug_assert_eq!(before - prog.text_size() as i64, stats.bytes_saved);
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{Assembler, Ref};
    use crate::isa::sdm1::*;
    use crate::reduce::{lengthen, relocate};
    use crate::vm;

    fn arch() -> &'static ArchSpec {
        ArchSpec::sdm1()
    }

    /// Three copies of a 12-byte sequence (two `ldi` into r1/r2).
    fn repeated(copies: usize) -> crate::TaskFile {
        let mut a = Assembler::new(0x100);
        a.label("main");
        a.input(0);
        for k in 0..copies {
            a.ldi(1, 7);
            a.ldi(2, 9);
            a.add(0, 1);
            a.out(0);
            a.addi(0, k as u32);
        }
        a.halt();
        a.finish("main").unwrap()
    }

    #[test]
    fn tokens_cover_every_instruction() {
        let tf = repeated(3);
        let p = Program::build(arch(), &tf).unwrap();
        let t = tokenize(&p);
        let ninstr = p.flat().iter().filter(|&&n| p.text(n).is_some()).count();
        assert_eq!(t.tokens.len(), ninstr + 1);
        assert_eq!(t.tokens[1], t.tokens[6]);
        assert_ne!(t.tokens[5], t.tokens[10]);
    }

    #[test]
    fn tokens_identify_targets_not_encodings() {
        let mut a = Assembler::new(0);
        a.label("main");
        a.jsr("f");
        for _ in 0..200 {
            a.nop();
        }
        a.jsr("f");
        for _ in 0..200 {
            a.nop();
        }
        a.jsr("g");
        a.halt();
        a.label("f");
        a.ret();
        a.label("g");
        a.ret();
        let tf = a.finish("main").unwrap();
        let p = Program::build(arch(), &tf).unwrap();
        let t = tokenize(&p);
        let jsrs: Vec<u32> = t
            .nodes
            .iter()
            .zip(&t.tokens)
            .filter(|(n, _)| p.text(**n).unwrap().opc == O_JSR)
            .map(|(_, &tok)| tok)
            .collect();
        assert_eq!(p.text(t.nodes[0]).unwrap().ops[0].mode, AM_D16);
        assert_eq!(p.text(t.nodes[201]).unwrap().ops[0].mode, AM_D16);
        assert_eq!(jsrs[0], jsrs[1]);
        assert_ne!(jsrs[1], jsrs[2]);
    }

    #[test]
    fn savings_formula() {
        assert_eq!(savings(3, 12, 5, 1), 8);
        assert_eq!(savings(2, 6, 5, 1), -5);
        assert_eq!(call_size(arch()), 5);
        assert_eq!(ret_size(arch()), 1);
    }

    #[test]
    fn two_adds_three_times() {
        let mut a = Assembler::new(0);
        a.label("main");
        for k in 0..3 {
            a.add(0, 1);
            a.add(2, 3);
            a.out(k);
        }
        a.halt();
        let p = Program::build(arch(), &a.finish("main").unwrap()).unwrap();
        let t = tokenize(&p);
        let tree = SuffixTree::new(t.tokens.clone()).unwrap();
        let pair = &t.tokens[0..2];
        let naive = t.tokens.windows(2).filter(|w| *w == pair).count();
        assert_eq!(naive, 3);
        assert_eq!(tree.count(pair), 3);
        let v = tree.internal_nodes().find(|&v| tree.path_label(v) == pair).unwrap();
        assert_eq!(tree.occurrences(v), vec![0, 3, 6]);
        // two 3-byte adds never pay for a call
        assert!(find_candidates(arch(), &p, &t, &tree, Priority::Value).is_empty());
    }

    #[test]
    fn return_is_never_inside_a_body() {
        let mut a = Assembler::new(0);
        a.label("main");
        for _ in 0..4 {
            a.jsr_abs("f");
        }
        a.halt();
        a.label("f");
        a.ldi(1, 1);
        a.ldi(2, 2);
        a.ldi(3, 3);
        a.ret();
        let p = Program::build(arch(), &a.finish("main").unwrap()).unwrap();
        let t = tokenize(&p);
        let tree = SuffixTree::new(t.tokens.clone()).unwrap();
        for q in find_candidates(arch(), &p, &t, &tree, Priority::Length) {
            for &pos in &q.cand.positions {
                for &n in &t.nodes[pos..pos + q.cand.tokens.len()] {
                    assert!(macro_safe(p.text(n).unwrap()));
                }
            }
        }
    }

    #[test]
    fn priorities_can_disagree() {
        let c = |s: i64, len: u32, at: usize| MacroCandidate {
            tokens: vec![0; 2],
            positions: vec![at],
            length_bytes: len,
            occurrences: 2,
            savings: s,
        };
        let short_frequent = c(30, 6, 0);
        let long_rare = c(20, 12, 10);
        let q = |p, cand: &MacroCandidate| Queued { priority: p, cand: cand.clone() };
        assert!(q(Priority::Value, &short_frequent) > q(Priority::Value, &long_rare));
        assert!(q(Priority::Length, &short_frequent) < q(Priority::Length, &long_rare));
    }

    fn compress_tf(tf: &crate::TaskFile, p: Priority) -> (MacroStats, crate::TaskFile, u32) {
        let mut prog = Program::build(arch(), tf).unwrap();
        let before = prog.text_size();
        let stats = compress(arch(), &mut prog, p);
        let after = prog.text_size();
        assert_eq!(before as i64 - after as i64, stats.bytes_saved);
        lengthen(arch(), &mut prog).unwrap();
        let out = relocate(arch(), &mut prog, tf).unwrap();
        (stats, out, after)
    }

    #[test]
    fn twelve_byte_sequence_three_times_saves_eight() {
        let tf = repeated(3);
        let (stats, out, _) = compress_tf(&tf, Priority::Value);
        // the repeated part is ldi, ldi, add, out: 6 + 6 + 3 + 2 = 17 bytes
        assert_eq!(stats.bodies, 1);
        assert_eq!(stats.calls, 3);
        assert_eq!(stats.bytes_saved, savings(3, 17, 5, 1));
        assert!(vm::equivalent(&tf, &out, &[vec![1], vec![5]], 10_000).unwrap());
    }

    #[test]
    fn exact_twelve_byte_case() {
        let mut a = Assembler::new(0);
        a.label("main");
        for k in 0..3 {
            a.ldi(1, 7);
            a.ldi(2, 9);
            a.out(k);
        }
        a.halt();
        let tf = a.finish("main").unwrap();
        let (stats, out, _) = compress_tf(&tf, Priority::Value);
        assert_eq!((stats.bodies, stats.calls, stats.bytes_saved), (1, 3, 8));
        assert!(vm::equivalent(&tf, &out, &[vec![]], 10_000).unwrap());
    }

    #[test]
    fn nothing_repeated_means_no_change() {
        let mut a = Assembler::new(0);
        a.label("main");
        a.ldi(1, 1);
        a.ldi(2, 2);
        a.out(1);
        a.halt();
        let tf = a.finish("main").unwrap();
        let (stats, out, _) = compress_tf(&tf, Priority::Length);
        assert_eq!(stats, MacroStats::default());
        assert_eq!(out, tf);
    }

    #[test]
    fn referenced_interior_blocks_an_occurrence() {
        let mut a = Assembler::new(0);
        a.label("main");
        a.ld(Ref::label("v"), 0);
        a.beq("skip");
        for k in 0..3 {
            a.ldi(1, 7);
            if k == 0 {
                a.label("skip");
            }
            a.ldi(2, 9);
            a.out(1);
        }
        a.halt();
        a.data_label("v");
        a.data_word(0);
        let tf = a.finish("main").unwrap();
        let (stats, out, _) = compress_tf(&tf, Priority::Value);
        // only two clean copies remain: 2 * (14 - 5) - 15 = 3
        assert_eq!((stats.calls, stats.bytes_saved), (2, 3));
        assert!(vm::equivalent(&tf, &out, &[vec![]], 10_000).unwrap());
    }

    #[test]
    fn unsafe_tail_is_shortened() {
        let mut a = Assembler::new(0);
        a.label("main");
        for _ in 0..3 {
            a.ldi(1, 7);
            a.ldi(2, 9);
            a.push(1);
        }
        a.jsr_abs("f");
        a.halt();
        a.label("f");
        a.ret();
        let tf = a.finish("main").unwrap();
        let (stats, out, _) = compress_tf(&tf, Priority::Length);
        assert_eq!((stats.bodies, stats.calls, stats.bytes_saved), (1, 3, 8));
        assert!(vm::equivalent(&tf, &out, &[vec![]], 10_000).unwrap());
    }

    #[test]
    fn fall_through_tail_skips_the_pass() {
        let mut a = Assembler::new(0);
        a.label("main");
        for _ in 0..3 {
            a.ldi(1, 7);
            a.ldi(2, 9);
            a.out(1);
        }
        let tf = a.finish("main").unwrap();
        let mut p = Program::build(arch(), &tf).unwrap();
        assert_eq!(compress(arch(), &mut p, Priority::Value), MacroStats::default());
    }

    #[test]
    fn generated_programs_stay_equivalent() {
        for seed in 0..6 {
            let tf = crate::gen::generate(&crate::gen::GenConfig::small(), seed);
            for p in [Priority::Value, Priority::Length] {
                let (_, out, _) = compress_tf(&tf, p);
                let inputs = crate::gen::inputs(seed, 4);
                assert!(vm::equivalent(&tf, &out, &inputs, 200_000).unwrap(), "seed {seed}");
            }
        }
    }
}
