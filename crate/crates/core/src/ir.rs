//! Dynamic representation of a task file: text and data nodes grouped into
//! blocks.
//!
//! Construction runs in four steps, mirrored by [`Program::build`]:
//!
//! 1. [`parse_instructions`] splits the text segment into one [`TextNode`] per
//!    instruction and appends a single [`DataNode`] for the data segment.
//! 2. [`jsr_prepass`] counts calls so that blocking can see which instructions
//!    start subprograms.
//! 3. [`text_blocking`] partitions the node list wherever a no-fallthrough
//!    instruction is followed by a call target.
//! 4. [`link_operands`] resolves every relocatable operand to the node that
//!    contains its effective address and tallies exact reference counts.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::isa::{sdm1, ArchSpec, DecodeError, ModeId, OpcId};
use crate::taskfile::{RelocEntry, Segment, TaskFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl BlockId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Operand {
    /// Effective address at input time; set for relocatable operands only.
    pub addr: Option<u32>,
    /// Node containing `addr`.
    pub target: Option<NodeId>,
    pub mode: ModeId,
    /// Byte index of the register byte or extension word.
    pub offset: u8,
    pub reg: Option<u8>,
    /// Extension word as read. Non-relocatable operands are re-emitted from it.
    pub value: u32,
}

impl Operand {
    pub fn is_relocatable(&self) -> bool {
        self.target.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextNode {
    pub opc: OpcId,
    pub iaddr: u32,
    pub faddr: u32,
    /// Input bytes; the final image is produced by relocation.
    pub instr: Vec<u8>,
    pub ibytes: u32,
    pub nbytes: u32,
    pub refs: u32,
    pub jsr: u32,
    pub ops: Vec<Operand>,
}

impl TextNode {
    pub fn modes(&self) -> Vec<ModeId> {
        self.ops.iter().map(|o| o.mode).collect()
    }

    /// No fallthrough to the next instruction.
    pub fn is_unconditional_transfer(&self) -> bool {
        matches!(self.opc, sdm1::O_JMP | sdm1::O_RET | sdm1::O_HALT)
    }

    /// Recomputes `nbytes` and operand offsets after a mode change.
    pub fn relayout(&mut self, arch: &ArchSpec) {
        let modes = self.modes();
        self.nbytes = arch
            .instr_size(self.opc, &modes)
            .expect("installed modes are legal for the opcode") as u32;
        for (op, off) in self.ops.iter_mut().zip(arch.operand_offsets(&modes)) {
            op.offset = off as u8;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataNode {
    pub iaddr: u32,
    pub faddr: u32,
    pub nbytes: u32,
    pub refs: u32,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Text(TextNode),
    Data(DataNode),
}

impl Node {
    pub fn iaddr(&self) -> u32 {
        match self {
            Node::Text(t) => t.iaddr,
            Node::Data(d) => d.iaddr,
        }
    }

    pub fn faddr(&self) -> u32 {
        match self {
            Node::Text(t) => t.faddr,
            Node::Data(d) => d.faddr,
        }
    }

    pub fn set_faddr(&mut self, a: u32) {
        match self {
            Node::Text(t) => t.faddr = a,
            Node::Data(d) => d.faddr = a,
        }
    }

    pub fn nbytes(&self) -> u32 {
        match self {
            Node::Text(t) => t.nbytes,
            Node::Data(d) => d.nbytes,
        }
    }

    pub fn refs(&self) -> u32 {
        match self {
            Node::Text(t) => t.refs,
            Node::Data(d) => d.refs,
        }
    }

    pub fn refs_mut(&mut self) -> &mut u32 {
        match self {
            Node::Text(t) => &mut t.refs,
            Node::Data(d) => &mut d.refs,
        }
    }

    pub fn jsr(&self) -> u32 {
        match self {
            Node::Text(t) => t.jsr,
            Node::Data(_) => 0,
        }
    }

    pub fn as_text(&self) -> Option<&TextNode> {
        match self {
            Node::Text(t) => Some(t),
            Node::Data(_) => None,
        }
    }

    pub fn as_text_mut(&mut self) -> Option<&mut TextNode> {
        match self {
            Node::Text(t) => Some(t),
            Node::Data(_) => None,
        }
    }

    pub fn is_data(&self) -> bool {
        matches!(self, Node::Data(_))
    }

    /// Whether `addr` falls inside this node's input image.
    pub fn contains(&self, addr: u32) -> bool {
        let len = match self {
            Node::Text(t) => t.ibytes,
            Node::Data(d) => d.nbytes,
        };
        let start = self.iaddr() as u64;
        let a = addr as u64;
        a >= start && a < start + len as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BlockNode {
    pub saddr: u32,
    pub eaddr: u32,
    pub nodes: Vec<NodeId>,
    pub inext: Option<BlockId>,
    pub next: Option<BlockId>,
    /// Per span: references from placed blocks that reach this block.
    pub refs: Vec<u32>,
    /// Per span: relocatable operands here that reach placed blocks.
    pub reloc: Vec<u32>,
    /// Relocatable operands here that reference the data segment.
    pub dreloc: u32,
    /// References into this block from other unplaced blocks.
    pub ubref: u32,
    /// Relocatable operands here that reference other unplaced blocks.
    pub ubreloc: u32,
}

/// A relocation entry that marks an instruction operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextReloc {
    /// Position in the input relocation list.
    pub index: usize,
    pub node: NodeId,
    pub opnum: usize,
}

/// A relocation entry that marks an address word in the data segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataReloc {
    pub index: usize,
    pub offset: u32,
    pub value: u32,
    pub target: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IrError {
    #[error("parse error: {0}")]
    Decode(#[from] DecodeError),
    #[error("reloc not at relocation point: text offset {offset:#x}")]
    RelocNotAtRelocationPoint { offset: u32 },
    #[error("duplicate relocation entry for {segment:?} offset {offset:#x}")]
    DuplicateReloc { segment: Segment, offset: u32 },
    #[error("address {addr:#x} referenced from {from:#x} lies outside text and data")]
    AddressUnmapped { addr: u32, from: u32 },
    #[error("entry {0:#x} is not at an instruction start")]
    EntryNotInstruction(u32),
}

#[derive(Debug, Clone)]
pub struct Program {
    pub load_addr: u32,
    /// `None` only for an empty text segment.
    pub entry: Option<NodeId>,
    pub nodes: Vec<Node>,
    pub removed: Vec<bool>,
    pub blocks: Vec<BlockNode>,
    pub head: BlockId,
    pub data_node: NodeId,
    pub data_block: BlockId,
    pub text_relocs: Vec<TextReloc>,
    pub data_relocs: Vec<DataReloc>,
    /// Blocks sorted by `saddr`, for lookup.
    by_saddr: Vec<BlockId>,
    /// Next address handed to synthesized code (past the input image).
    synth_addr: u32,
}

/// Splits `text` into instructions and appends the data-segment node.
pub fn parse_instructions(
    arch: &ArchSpec,
    text: &[u8],
    load_addr: u32,
    data: &[u8],
) -> Result<Vec<Node>, IrError> {
    let mut nodes = Vec::new();
    let mut at = 0;
    while at < text.len() {
        let d = arch.decode(text, at)?;
        let iaddr = load_addr.wrapping_add(at as u32);
        let ops = d
            .operands
            .iter()
            .zip(&d.offsets)
            .map(|(raw, &off)| Operand {
                addr: None,
                target: None,
                mode: raw.mode,
                offset: off as u8,
                reg: raw.reg,
                value: raw.value,
            })
            .collect();
        nodes.push(Node::Text(TextNode {
            opc: d.opc,
            iaddr,
            faddr: iaddr,
            instr: text[at..at + d.len].to_vec(),
            ibytes: d.len as u32,
            nbytes: d.len as u32,
            refs: 0,
            jsr: 0,
            ops,
        }));
        at += d.len;
    }
    let daddr = load_addr.wrapping_add(text.len() as u32);
    nodes.push(Node::Data(DataNode {
        iaddr: daddr,
        faddr: daddr,
        nbytes: data.len() as u32,
        refs: 0,
        bytes: data.to_vec(),
    }));
    Ok(nodes)
}

/// Effective address of a pc-relative operand.
pub fn pc_relative_target(iaddr: u32, disp: u32) -> u32 {
    (iaddr as i64 + sdm1::PC_BIAS + disp as i32 as i64) as u32
}

fn flat_lookup(nodes: &[Node], addr: u32) -> Option<usize> {
    let i = nodes.partition_point(|n| n.iaddr() <= addr);
    let i = i.checked_sub(1)?;
    nodes[i].contains(addr).then_some(i)
}

/// Text offsets of every 4-byte extension word, keyed to (node, operand).
fn relocation_points(arch: &ArchSpec, nodes: &[Node], load_addr: u32) -> HashMap<u32, (usize, usize)> {
    let mut points = HashMap::new();
    for (i, n) in nodes.iter().enumerate() {
        let Node::Text(t) = n else { continue };
        for (opnum, op) in t.ops.iter().enumerate() {
            let m = arch.mode(op.mode);
            if m.ext_size == 4 && !m.pc_relative {
                points.insert(t.iaddr.wrapping_sub(load_addr) + op.offset as u32, (i, opnum));
            }
        }
    }
    points
}

/// Sets JSR counts ahead of blocking: one per call whose operand is
/// pc-relative or reloc-marked, plus the implicit call of the entry point.
pub fn jsr_prepass(
    arch: &ArchSpec,
    nodes: &mut [Node],
    relocs: &[RelocEntry],
    load_addr: u32,
    entry: u32,
) {
    let points = relocation_points(arch, nodes, load_addr);
    let marked: std::collections::HashSet<(usize, usize)> = relocs
        .iter()
        .filter(|r| r.segment == Segment::Text)
        .filter_map(|r| points.get(&r.offset).copied())
        .collect();
    let mut hits = Vec::new();
    for (i, n) in nodes.iter().enumerate() {
        let Node::Text(t) = n else { continue };
        if t.opc != sdm1::O_JSR {
            continue;
        }
        let op = &t.ops[0];
        let addr = if arch.mode(op.mode).pc_relative {
            pc_relative_target(t.iaddr, op.value)
        } else if marked.contains(&(i, 0)) {
            op.value
        } else {
            continue;
        };
        if let Some(j) = flat_lookup(nodes, addr) {
            hits.push(j);
        }
    }
    if let Some(j) = flat_lookup(nodes, entry) {
        hits.push(j);
    }
    for j in hits {
        if let Node::Text(t) = &mut nodes[j] {
            t.jsr += 1;
        }
    }
}

/// Partitions the node list. A block boundary falls between a no-fallthrough
/// instruction and a following instruction with a non-zero JSR count; the data
/// node always forms the final block on its own.
pub fn text_blocking(nodes: &[Node]) -> Vec<BlockNode> {
    let mut blocks: Vec<BlockNode> = Vec::new();
    let mut current: Vec<NodeId> = Vec::new();
    let mut prev_stops = false;
    for (i, n) in nodes.iter().enumerate() {
        let id = NodeId(i as u32);
        match n {
            Node::Text(t) => {
                if !current.is_empty() && prev_stops && t.jsr > 0 {
                    blocks.push(BlockNode { nodes: std::mem::take(&mut current), ..Default::default() });
                }
                current.push(id);
                prev_stops = t.is_unconditional_transfer();
            }
            Node::Data(_) => {
                if !current.is_empty() {
                    blocks.push(BlockNode { nodes: std::mem::take(&mut current), ..Default::default() });
                }
                blocks.push(BlockNode { nodes: vec![id], ..Default::default() });
            }
        }
    }
    let count = blocks.len();
    for (i, b) in blocks.iter_mut().enumerate() {
        b.saddr = nodes[b.nodes[0].index()].iaddr();
        let succ = (i + 1 < count).then(|| BlockId(i as u32 + 1));
        b.inext = succ;
        b.next = succ;
    }
    for i in 0..count {
        blocks[i].eaddr = if i + 1 < count {
            blocks[i + 1].saddr
        } else {
            let last = nodes[blocks[i].nodes.last().expect("blocks are non-empty").index()].clone();
            last.iaddr().wrapping_add(last.nbytes())
        };
    }
    blocks
}

impl Program {
    /// Parses, blocks and links a task file.
    pub fn build(arch: &ArchSpec, tf: &TaskFile) -> Result<Program, IrError> {
        let mut nodes = parse_instructions(arch, &tf.text, tf.load_addr, &tf.data)?;
        jsr_prepass(arch, &mut nodes, &tf.relocs, tf.load_addr, tf.entry);
        let blocks = text_blocking(&nodes);
        let mut prog = Program::from_parts(tf.load_addr, nodes, blocks);
        prog.resolve_entry(tf)?;
        link_operands(arch, &mut prog, &tf.relocs)?;
        Ok(prog)
    }

    /// Points `entry` at the instruction starting at the task file's entry
    /// address. An empty text segment has no entry node.
    pub fn resolve_entry(&mut self, tf: &TaskFile) -> Result<(), IrError> {
        if tf.text.is_empty() {
            return Ok(());
        }
        let entry = self
            .find_node(tf.entry)
            .filter(|&n| self.node(n).iaddr() == tf.entry && !self.node(n).is_data())
            .ok_or(IrError::EntryNotInstruction(tf.entry))?;
        self.entry = Some(entry);
        Ok(())
    }

    pub fn from_parts(load_addr: u32, nodes: Vec<Node>, blocks: Vec<BlockNode>) -> Program {
        let data_node = NodeId(nodes.len() as u32 - 1);
        let data_block = BlockId(blocks.len() as u32 - 1);
        let mut by_saddr: Vec<BlockId> = (0..blocks.len() as u32).map(BlockId).collect();
        by_saddr.sort_by_key(|b| blocks[b.index()].saddr);
        let end = nodes.last().map_or(load_addr, |n| n.iaddr().wrapping_add(n.nbytes()));
        Program {
            load_addr,
            entry: None,
            removed: vec![false; nodes.len()],
            nodes,
            blocks,
            head: BlockId(0),
            data_node,
            data_block,
            text_relocs: Vec::new(),
            data_relocs: Vec::new(),
            by_saddr,
            synth_addr: end,
        }
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut Node {
        &mut self.nodes[id.index()]
    }

    pub fn text(&self, id: NodeId) -> Option<&TextNode> {
        self.node(id).as_text()
    }

    pub fn text_mut(&mut self, id: NodeId) -> Option<&mut TextNode> {
        self.node_mut(id).as_text_mut()
    }

    pub fn block(&self, id: BlockId) -> &BlockNode {
        &self.blocks[id.index()]
    }

    pub fn is_removed(&self, id: NodeId) -> bool {
        self.removed[id.index()]
    }

    /// Blocks in current layout order, following `next`.
    pub fn order(&self) -> Vec<BlockId> {
        let mut out = Vec::new();
        let mut cur = Some(self.head);
        while let Some(b) = cur {
            out.push(b);
            cur = self.blocks[b.index()].next;
        }
        out
    }

    /// Re-links `next` so the blocks follow `order`.
    pub fn set_order(&mut self, order: &[BlockId]) {
        self.head = order[0];
        for w in order.windows(2) {
            self.blocks[w[0].index()].next = Some(w[1]);
        }
        self.blocks[order[order.len() - 1].index()].next = None;
    }

    /// Text blocks in layout order (the data block excluded).
    pub fn text_blocks(&self) -> Vec<BlockId> {
        self.order().into_iter().filter(|&b| b != self.data_block).collect()
    }

    /// All live nodes in layout order, data node last.
    pub fn flat(&self) -> Vec<NodeId> {
        self.order()
            .into_iter()
            .flat_map(|b| self.blocks[b.index()].nodes.iter().copied())
            .collect()
    }

    pub fn text_size(&self) -> u32 {
        self.flat()
            .into_iter()
            .filter_map(|n| self.text(n))
            .map(|t| t.nbytes)
            .sum()
    }

    pub fn block_size(&self, b: BlockId) -> u32 {
        self.blocks[b.index()].nodes.iter().map(|&n| self.node(n).nbytes()).sum()
    }

    /// Locates the node containing `addr`: binary search over blocks by start
    /// address, then a scan of that block's nodes.
    pub fn find_node(&self, addr: u32) -> Option<NodeId> {
        let i = self
            .by_saddr
            .partition_point(|b| self.blocks[b.index()].saddr <= addr);
        // Blocks emptied by elimination keep their slot; step back past them.
        let blk = self.by_saddr[..i]
            .iter()
            .rev()
            .map(|b| &self.blocks[b.index()])
            .find(|blk| !blk.nodes.is_empty())?;
        blk.nodes.iter().copied().find(|&n| self.node(n).contains(addr))
    }

    /// Address a relocatable operand names once every node sits at its FADDR.
    pub fn final_address(&self, op: &Operand) -> Option<u32> {
        let t = self.node(op.target?);
        Some(t.faddr().wrapping_add(op.addr?.wrapping_sub(t.iaddr())))
    }

    /// Allocates addresses for synthesized nodes beyond the input image.
    pub fn alloc_synthetic(&mut self, len: u32) -> u32 {
        let a = self.synth_addr;
        self.synth_addr = self.synth_addr.wrapping_add(len);
        a
    }

    /// Appends a new text block just ahead of the data block.
    pub fn push_text_block(&mut self, nodes: Vec<NodeId>) -> BlockId {
        let id = BlockId(self.blocks.len() as u32);
        let saddr = self.node(nodes[0]).iaddr();
        let last = self.node(*nodes.last().expect("non-empty block"));
        let eaddr = last.iaddr().wrapping_add(last.nbytes());
        self.blocks.push(BlockNode { saddr, eaddr, nodes, ..Default::default() });
        let mut order = self.order();
        let at = order.iter().position(|&b| b == self.data_block).unwrap_or(order.len());
        order.insert(at, id);
        self.set_order(&order);
        let pos = self.by_saddr.partition_point(|b| self.blocks[b.index()].saddr <= saddr);
        self.by_saddr.insert(pos, id);
        id
    }

    pub fn push_node(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        self.removed.push(false);
        NodeId(self.nodes.len() as u32 - 1)
    }

    /// Unlinks removed nodes from their blocks and drops emptied blocks from
    /// the layout.
    pub fn compact(&mut self) {
        let removed = &self.removed;
        for b in &mut self.blocks {
            b.nodes.retain(|n| !removed[n.index()]);
        }
        let order: Vec<BlockId> = self
            .order()
            .into_iter()
            .filter(|b| !self.blocks[b.index()].nodes.is_empty())
            .collect();
        self.set_order(&order);
    }

    /// One line per live node: iaddr, faddr, opcode and modes, ref/jsr.
    pub fn dump(&self, arch: &ArchSpec) -> String {
        let mut s = String::new();
        for b in self.order() {
            let blk = self.block(b);
            let _ = writeln!(s, "; block {} saddr={:#010x}", b.0, blk.saddr);
            for &n in &blk.nodes {
                match self.node(n) {
                    Node::Text(t) => {
                        let _ = writeln!(
                            s,
                            "{:#010x} {:#010x} {:<14} {}/{}",
                            t.iaddr,
                            t.faddr,
                            arch.describe(t.opc, &t.modes()),
                            t.refs,
                            t.jsr
                        );
                    }
                    Node::Data(d) => {
                        let _ = writeln!(
                            s,
                            "{:#010x} {:#010x} {:<14} {}/0",
                            d.iaddr,
                            d.faddr,
                            format!("data[{}]", d.nbytes),
                            d.refs
                        );
                    }
                }
            }
        }
        s
    }
}

/// Resolves relocatable operands and data address words, setting ADDR and
/// TARGET and recounting REF and JSR from scratch.
pub fn link_operands(arch: &ArchSpec, prog: &mut Program, relocs: &[RelocEntry]) -> Result<(), IrError> {
    for n in &mut prog.nodes {
        *n.refs_mut() = 0;
        if let Node::Text(t) = n {
            t.jsr = 0;
            for op in &mut t.ops {
                op.addr = None;
                op.target = None;
            }
        }
    }
    if let Some(e) = prog.entry {
        if let Node::Text(t) = prog.node_mut(e) {
            t.refs += 1;
            t.jsr += 1;
        }
    }

    let points = relocation_points(arch, &prog.nodes, prog.load_addr);
    let mut text_relocs = Vec::new();
    let mut pending_data = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (index, r) in relocs.iter().enumerate() {
        if !seen.insert(*r) {
            return Err(IrError::DuplicateReloc { segment: r.segment, offset: r.offset });
        }
        match r.segment {
            Segment::Text => {
                let &(node, opnum) = points
                    .get(&r.offset)
                    .ok_or(IrError::RelocNotAtRelocationPoint { offset: r.offset })?;
                text_relocs.push(TextReloc { index, node: NodeId(node as u32), opnum });
            }
            Segment::Data => pending_data.push((index, r.offset)),
        }
    }

    for tr in &text_relocs {
        if let Node::Text(t) = &mut prog.nodes[tr.node.index()] {
            let op = &mut t.ops[tr.opnum];
            op.addr = Some(op.value);
        }
    }
    for n in &mut prog.nodes {
        if let Node::Text(t) = n {
            for op in &mut t.ops {
                if arch.mode(op.mode).pc_relative {
                    op.addr = Some(pc_relative_target(t.iaddr, op.value));
                }
            }
        }
    }

    // second pass: targets and counts
    let mut bumps: Vec<(NodeId, bool)> = Vec::new();
    for i in 0..prog.nodes.len() {
        let Node::Text(t) = &prog.nodes[i] else { continue };
        let is_call = t.opc == sdm1::O_JSR;
        let iaddr = t.iaddr;
        let addrs: Vec<(usize, u32)> =
            t.ops.iter().enumerate().filter_map(|(k, o)| o.addr.map(|a| (k, a))).collect();
        for (k, a) in addrs {
            let target = prog.find_node(a).ok_or(IrError::AddressUnmapped { addr: a, from: iaddr })?;
            if let Node::Text(t) = &mut prog.nodes[i] {
                t.ops[k].target = Some(target);
            }
            bumps.push((target, is_call));
        }
    }
    let data_iaddr = prog.node(prog.data_node).iaddr();
    let mut data_relocs = Vec::new();
    for (index, offset) in pending_data {
        let Node::Data(d) = prog.node(prog.data_node) else { unreachable!() };
        let o = offset as usize;
        let value = u32::from_le_bytes([d.bytes[o], d.bytes[o + 1], d.bytes[o + 2], d.bytes[o + 3]]);
        let target = prog
            .find_node(value)
            .ok_or(IrError::AddressUnmapped { addr: value, from: data_iaddr.wrapping_add(offset) })?;
        data_relocs.push(DataReloc { index, offset, value, target });
        bumps.push((target, false));
    }
    for (target, is_call) in bumps {
        let n = prog.node_mut(target);
        *n.refs_mut() += 1;
        if is_call {
            if let Node::Text(t) = n {
                t.jsr += 1;
            }
        }
    }
    prog.text_relocs = text_relocs;
    prog.data_relocs = data_relocs;
    Ok(())
}

/// Shorthand for [`Program::find_node`].
pub fn find_node(prog: &Program, addr: u32) -> Option<NodeId> {
    prog.find_node(addr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{Assembler, Ref};
    use crate::isa::sdm1::*;
    use crate::taskfile::Segment;

    fn arch() -> &'static ArchSpec {
        ArchSpec::sdm1()
    }

    #[test]
    fn parses_fig_2_1_shape() {
        let text = [0x14, 0x20, 0x0C, 0x00, 0x00];
        let nodes = parse_instructions(arch(), &text, 0x0A00, &[]).unwrap();
        assert_eq!(nodes.len(), 2);
        let t = nodes[0].as_text().unwrap();
        assert_eq!(t.opc, O_JSR);
        assert_eq!(t.iaddr, 0x0A00);
        assert_eq!(t.faddr, t.iaddr);
        assert_eq!(t.nbytes, 5);
        assert_eq!(t.ops[0].mode, AM_ABS);
        assert_eq!(t.ops[0].offset, 1);
        assert_eq!(t.ops[0].value, 0x0C20);
        assert!(nodes[1].is_data());
    }

    #[test]
    fn empty_text_has_only_data_node() {
        let nodes = parse_instructions(arch(), &[], 0x1000, &[1, 2]).unwrap();
        assert_eq!(nodes.len(), 1);
        assert!(nodes[0].is_data());
        let tf = TaskFile { load_addr: 0x1000, entry: 0x1000, data: vec![1, 2], ..Default::default() };
        let prog = Program::build(arch(), &tf).unwrap();
        assert_eq!(prog.entry, None);
        assert_eq!(prog.order(), vec![prog.data_block]);
    }

    #[test]
    fn parse_errors_carry_offsets() {
        assert_eq!(
            parse_instructions(arch(), &[0x01, 0xEE], 0, &[]),
            Err(IrError::Decode(DecodeError::UnknownOpcode { offset: 1, byte: 0xEE }))
        );
        assert_eq!(
            parse_instructions(arch(), &[0x01, 0x15, 0x00], 0, &[]),
            Err(IrError::Decode(DecodeError::Truncated { offset: 1 }))
        );
    }

    /// jsr at 0x0A00 to S at 0x0C20, with filler between.
    fn fig_2_3() -> TaskFile {
        let mut a = Assembler::new(0x0A00);
        a.label("main");
        a.jsr_abs("S");
        a.halt();
        while a.here() < 0x0C20 {
            a.nop();
        }
        a.label("S");
        a.ret();
        a.finish("main").unwrap()
    }

    #[test]
    fn linking_sets_target_ref_and_jsr() {
        let tf = fig_2_3();
        let prog = Program::build(arch(), &tf).unwrap();
        let jsr = prog.find_node(0x0A00).unwrap();
        let s = prog.find_node(0x0C20).unwrap();
        let op = &prog.text(jsr).unwrap().ops[0];
        assert_eq!(op.addr, Some(0x0C20));
        assert_eq!(op.target, Some(s));
        let st = prog.text(s).unwrap();
        assert_eq!((st.refs, st.jsr), (1, 1));
        // entry carries its implicit call
        let e = prog.text(jsr).unwrap();
        assert_eq!((e.refs, e.jsr), (1, 1));
    }

    #[test]
    fn straight_line_program_is_one_block_with_no_refs() {
        let mut a = Assembler::new(0x100);
        a.label("main");
        a.ldi(0, 42);
        a.out(0);
        a.halt();
        let tf = a.finish("main").unwrap();
        let prog = Program::build(arch(), &tf).unwrap();
        assert_eq!(prog.text_blocks().len(), 1);
        for n in prog.flat() {
            let expect = if Some(n) == prog.entry { 1 } else { 0 };
            assert_eq!(prog.node(n).refs(), expect);
        }
    }

    #[test]
    fn blocking_splits_after_ret_before_call_target() {
        let mut a = Assembler::new(0);
        a.label("main");
        a.jsr_abs("f");
        a.halt();
        a.label("f");
        a.nop();
        a.ret();
        a.label("g"); // referenced but not called: no split
        a.nop();
        a.ret();
        a.data_ptr(Ref::label("g"));
        let tf = a.finish("main").unwrap();
        let prog = Program::build(arch(), &tf).unwrap();
        let blocks = prog.text_blocks();
        assert_eq!(blocks.len(), 2);
        assert_eq!(prog.block(blocks[1]).saddr, 6);
        assert_eq!(prog.block(blocks[0]).eaddr, 6);
        let flat: Vec<NodeId> = prog.flat();
        assert_eq!(flat, (0..prog.nodes.len() as u32).map(NodeId).collect::<Vec<_>>());
        assert!(prog.node(*flat.last().unwrap()).is_data());
    }

    #[test]
    fn reloc_must_hit_an_extension_word() {
        let mut tf = fig_2_3();
        tf.relocs.push(RelocEntry { segment: Segment::Text, offset: 2 });
        assert_eq!(Program::build(arch(), &tf).unwrap_err(), IrError::RelocNotAtRelocationPoint { offset: 2 });
    }

    #[test]
    fn unmapped_address_is_diagnosed() {
        let mut tf = fig_2_3();
        tf.text[1..5].copy_from_slice(&0x9000_0000u32.to_le_bytes());
        assert!(matches!(Program::build(arch(), &tf), Err(IrError::AddressUnmapped { addr: 0x9000_0000, .. })));
    }

    #[test]
    fn find_node_uses_containment() {
        let tf = fig_2_3();
        let prog = Program::build(arch(), &tf).unwrap();
        let jsr = prog.find_node(0x0A00).unwrap();
        assert_eq!(prog.find_node(0x0A03), Some(jsr));
        assert_eq!(prog.find_node(0x09FF), None);
        for b in prog.text_blocks() {
            assert_eq!(prog.find_node(prog.block(b).saddr), Some(prog.block(b).nodes[0]));
        }
    }
}
