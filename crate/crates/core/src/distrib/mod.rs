//! Code distribution: reorder text blocks so more references fall within the
//! short displacement spans.

pub mod graph;
pub mod heuristic;

use serde::{Deserialize, Serialize};

use crate::ir::{BlockId, Node, NodeId, Program};
use crate::isa::ArchSpec;

pub use graph::{
    acf, brute_force_arrangement, heuristic_arrangement, reduce_minla_to_minlta, span_of, tcf, Arrangement,
    ArrangementGraph, Edge, GraphError,
};
pub use heuristic::{code_distribution, BlockModel, CodeRef, DataRef, HeuristicConfig, SpanEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistribMode {
    Off,
    S0,
    S1,
    #[default]
    S0s1,
}

impl DistribMode {
    pub fn config(self, arch: &ArchSpec) -> Option<HeuristicConfig> {
        let (s0, s1) = match self {
            DistribMode::Off => return None,
            DistribMode::S0 => (true, false),
            DistribMode::S1 => (false, true),
            DistribMode::S0s1 => (true, true),
        };
        Some(HeuristicConfig::for_arch(arch, s0, s1))
    }
}

/// Extracts block sizes and inter-block references from the current layout.
pub fn block_model(prog: &Program) -> (BlockModel, Vec<BlockId>) {
    let blocks = prog.text_blocks();
    let mut where_is: std::collections::HashMap<NodeId, (usize, u32)> = Default::default();
    let mut model = BlockModel::default();
    for (i, &b) in blocks.iter().enumerate() {
        let mut off = 0;
        for &n in &prog.block(b).nodes {
            where_is.insert(n, (i, off));
            off += prog.node(n).nbytes();
        }
        model.sizes.push(off);
        model.keys.push(prog.block(b).saddr);
    }
    model.data_size = prog.node(prog.data_node).nbytes();
    for (&n, &(src, src_off)) in &where_is {
        let Some(t) = prog.text(n) else { continue };
        for op in &t.ops {
            let (Some(target), Some(addr)) = (op.target, op.addr) else { continue };
            let tn = prog.node(target);
            let intra = addr.wrapping_sub(tn.iaddr());
            if target == prog.data_node {
                model.data_refs.push(DataRef { src, src_off, data_off: intra });
            } else if let Some(&(dst, dst_off)) = where_is.get(&target) {
                if dst != src {
                    model.code_refs.push(CodeRef { src, src_off, dst, dst_off: dst_off + intra });
                }
            }
        }
    }
    // HashMap order is arbitrary; keep the model deterministic.
    model.code_refs.sort_by_key(|r| (r.src, r.src_off, r.dst, r.dst_off));
    model.data_refs.sort_by_key(|r| (r.src, r.src_off, r.data_off));
    if let Some(&last) = blocks.last() {
        let tail = prog.block(last).nodes.last().and_then(|&n| prog.text(n));
        if tail.is_some_and(|t| !t.is_unconditional_transfer()) {
            model.pinned_last = Some(blocks.len() - 1);
        }
    }
    (model, blocks)
}

/// Reorders the text blocks of `prog`; the data block stays last. Returns
/// whether the order changed.
pub fn distribute(prog: &mut Program, cfg: &HeuristicConfig) -> bool {
    let (model, blocks) = block_model(prog);
    if blocks.len() < 2 {
        return false;
    }
    let order = code_distribution(&model, cfg);
    let dreloc = heuristic::set_dreloc(&model);
    for (i, &b) in blocks.iter().enumerate() {
        prog.blocks[b.index()].dreloc = dreloc[i];
    }
    let mut new_order: Vec<BlockId> = order.iter().map(|&i| blocks[i]).collect();
    let changed = new_order != blocks;
    new_order.push(prog.data_block);
    prog.set_order(&new_order);
    changed
}

/// Whether the final text block could run into whatever follows it.
pub fn last_block_falls_through(prog: &Program) -> bool {
    prog.text_blocks()
        .last()
        .and_then(|&b| prog.block(b).nodes.last())
        .and_then(|&n| match prog.node(n) {
            Node::Text(t) => Some(!t.is_unconditional_transfer()),
            Node::Data(_) => None,
        })
        .unwrap_or(false)
}
