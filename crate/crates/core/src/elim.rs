//! Unreferenced code elimination extended with trial subprogram elimination.
//!
//! A candidate region starts at an unreferenced instruction that follows a
//! `jmp`, `ret` or `halt`. The unreferenced prefix (SUB1 up to LOOP) is always
//! dead. The rest of the subprogram (LOOP up to the next call target, SUB2) is
//! removed only if every reference into it comes from inside it; otherwise the
//! reference counts touched by the trial are put back.

use thiserror::Error;

use crate::ir::{Node, NodeId, Program};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ElimError {
    #[error("reference count underflow at {0:#x}")]
    RefUnderflow(u32),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ElimStats {
    pub bytes_removed: u32,
    pub nodes_removed: u32,
    /// Whole-program passes, including the final one that removed nothing.
    pub passes: u32,
}

/// Operand targets of a text node, with whether each reference is a call.
fn out_refs(prog: &Program, n: NodeId) -> Vec<(NodeId, bool)> {
    match prog.node(n) {
        Node::Text(t) => {
            let call = t.opc == crate::isa::sdm1::O_JSR;
            t.ops.iter().filter_map(|o| o.target).map(|tg| (tg, call)).collect()
        }
        Node::Data(_) => Vec::new(),
    }
}

fn decrement(prog: &mut Program, target: NodeId, call: bool) -> Result<(), ElimError> {
    let iaddr = prog.node(target).iaddr();
    let node = prog.node_mut(target);
    let r = node.refs_mut();
    *r = r.checked_sub(1).ok_or(ElimError::RefUnderflow(iaddr))?;
    if call {
        if let Node::Text(t) = node {
            t.jsr = t.jsr.checked_sub(1).ok_or(ElimError::RefUnderflow(iaddr))?;
        }
    }
    Ok(())
}

fn increment(prog: &mut Program, target: NodeId, call: bool) {
    let node = prog.node_mut(target);
    *node.refs_mut() += 1;
    if call {
        if let Node::Text(t) = node {
            t.jsr += 1;
        }
    }
}

fn remove(prog: &mut Program, nodes: &[NodeId], stats: &mut ElimStats) {
    for &n in nodes {
        prog.removed[n.index()] = true;
        stats.bytes_removed += prog.node(n).nbytes();
        stats.nodes_removed += 1;
    }
}

/// One forward pass. Returns whether anything was removed.
fn pass(prog: &mut Program, stats: &mut ElimStats) -> Result<bool, ElimError> {
    let flat = prog.flat();
    let mut any = false;
    let mut i = 0;
    while i + 1 < flat.len() {
        let opener = prog.text(flat[i]).is_some_and(|t| t.is_unconditional_transfer());
        let sub1 = i + 1;
        let cand = prog.node(flat[sub1]);
        if !opener || cand.is_data() || cand.refs() > 0 {
            i += 1;
            continue;
        }
        // SUB1~LOOP: unreferenced, removed unconditionally.
        let lp = (sub1..flat.len())
            .find(|&j| prog.node(flat[j]).is_data() || prog.node(flat[j]).refs() > 0)
            .expect("the data node terminates the scan");
        for &n in &flat[sub1..lp] {
            for (tg, call) in out_refs(prog, n) {
                decrement(prog, tg, call)?;
            }
        }
        remove(prog, &flat[sub1..lp], stats);
        any = true;

        let sub2 = (lp..flat.len())
            .find(|&j| prog.node(flat[j]).is_data() || prog.node(flat[j]).jsr() > 0)
            .expect("the data node terminates the scan");
        if sub2 == lp {
            i = lp;
            continue;
        }
        // LOOP~SUB2 on trial.
        let region = &flat[lp..sub2];
        let touched: Vec<(NodeId, bool)> = region.iter().flat_map(|&n| out_refs(prog, n)).collect();
        for &(tg, call) in &touched {
            decrement(prog, tg, call)?;
        }
        if region.iter().all(|&n| prog.node(n).refs() == 0) {
            remove(prog, region, stats);
            i = sub2;
        } else {
            for &(tg, call) in &touched {
                increment(prog, tg, call);
            }
            i = lp;
        }
    }
    Ok(any)
}

/// Runs elimination passes to a fixpoint and unlinks removed nodes.
pub fn eliminate(prog: &mut Program) -> Result<ElimStats, ElimError> {
    let mut stats = ElimStats::default();
    loop {
        stats.passes += 1;
        if !pass(prog, &mut stats)? {
            break;
        }
        prog.compact();
    }
    prog.compact();
    Ok(stats)
}
