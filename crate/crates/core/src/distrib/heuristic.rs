//! Greedy block ordering driven by the σ₀ (data reach) and σ₁ (code reach)
//! worth functions.
//!
//! Coordinates are bytes relative to the start of the data segment. Placed
//! blocks occupy `[-plsize, 0)`; a candidate block would occupy
//! `[-plsize - size, -plsize)`.

use crate::isa::{sdm1, ArchSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodeRef {
    pub src: usize,
    /// Offset of the referencing instruction's start within its block.
    pub src_off: u32,
    pub dst: usize,
    pub dst_off: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataRef {
    pub src: usize,
    pub src_off: u32,
    pub data_off: u32,
}

/// What the heuristic needs to know about a program's text blocks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlockModel {
    pub sizes: Vec<u32>,
    /// Tie-break key: original start address.
    pub keys: Vec<u32>,
    /// Inter-block references only.
    pub code_refs: Vec<CodeRef>,
    pub data_refs: Vec<DataRef>,
    pub data_size: u32,
    /// A block that must stay nearest the data segment.
    pub pinned_last: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanEntry {
    pub lo: i64,
    pub hi: i64,
    /// Bytes saved over the span-free mode.
    pub saved: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicConfig {
    pub enable_sigma0: bool,
    pub enable_sigma1: bool,
    pub sigma0_weight: f64,
    pub sigma1_weight: f64,
    pub spans: Vec<SpanEntry>,
}

impl HeuristicConfig {
    /// Spans of the architecture's displacement modes, with savings relative
    /// to absolute addressing.
    pub fn for_arch(arch: &ArchSpec, sigma0: bool, sigma1: bool) -> HeuristicConfig {
        let abs = arch.mode(sdm1::AM_ABS).ext_size as u32;
        let spans = [sdm1::AM_D8, sdm1::AM_D16]
            .iter()
            .map(|&m| {
                let md = arch.mode(m);
                let (lo, hi) = arch.spans.window(md.span).expect("displacement modes have spans");
                SpanEntry { lo, hi, saved: abs - md.ext_size as u32 }
            })
            .collect();
        HeuristicConfig { enable_sigma0: sigma0, enable_sigma1: sigma1, sigma0_weight: 1.0, sigma1_weight: 1.0, spans }
    }
}

/// Per-span reach counters of a candidate block against the placed list.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ties {
    /// References from placed blocks that reach the candidate's center.
    pub refs: Vec<u32>,
    /// References in the candidate that reach their placed targets.
    pub reloc: Vec<u32>,
}

/// Data-segment references per block.
pub fn set_dreloc(model: &BlockModel) -> Vec<u32> {
    let mut d = vec![0; model.sizes.len()];
    for r in &model.data_refs {
        d[r.src] += 1;
    }
    d
}

/// Recounts the candidate's ties given the start coordinate of each placed
/// block.
pub fn update_ties(model: &BlockModel, cfg: &HeuristicConfig, b1: usize, start: &[Option<i64>], plsize: i64) -> Ties {
    let size = model.sizes[b1] as i64;
    let b1_start = -plsize - size;
    let center = b1_start + size / 2;
    let mut t = Ties { refs: vec![0; cfg.spans.len()], reloc: vec![0; cfg.spans.len()] };
    for r in &model.code_refs {
        let range = if r.src == b1 {
            match start[r.dst] {
                Some(s) => s + r.dst_off as i64 - (b1_start + r.src_off as i64),
                None => continue,
            }
        } else if r.dst == b1 {
            match start[r.src] {
                Some(s) => center - (s + r.src_off as i64),
                None => continue,
            }
        } else {
            continue;
        };
        for (k, sp) in cfg.spans.iter().enumerate() {
            if (sp.lo..=sp.hi).contains(&range) {
                if r.src == b1 {
                    t.reloc[k] += 1;
                } else {
                    t.refs[k] += 1;
                }
            }
        }
    }
    t
}

/// Share of the data segment reachable under `span` from the center of a
/// block of `size` bytes placed at the head of the list.
pub fn data_reach(data_size: u32, size: u32, plsize: i64, span: &SpanEntry) -> f64 {
    if data_size == 0 {
        return 0.0;
    }
    let center = -plsize - size as i64 + size as i64 / 2;
    let lo = (center + span.lo).max(0);
    let hi = (center + span.hi).min(data_size as i64 - 1);
    if hi < lo {
        return 0.0;
    }
    ((hi - lo + 1) as f64 / data_size as f64).clamp(0.0, 1.0)
}

/// Worth of placing `b1` at the head of the list, for one span.
pub fn worth(
    model: &BlockModel,
    cfg: &HeuristicConfig,
    b1: usize,
    ties: &Ties,
    dreloc: u32,
    plsize: i64,
    span: usize,
) -> f64 {
    let sp = &cfg.spans[span];
    let mut w = 0.0;
    if cfg.enable_sigma0 {
        let size = model.sizes[b1].max(1);
        let s0 = dreloc as f64 * data_reach(model.data_size, size, plsize, sp) * sp.saved as f64 / size as f64;
        w += cfg.sigma0_weight * s0;
    }
    if cfg.enable_sigma1 {
        w += cfg.sigma1_weight * (ties.reloc[span] + ties.refs[span]) as f64;
    }
    w
}

/// Orders blocks from the data segment backwards, each time placing the
/// unplaced block of greatest total worth. Returns block indices in final
/// layout order.
pub fn code_distribution(model: &BlockModel, cfg: &HeuristicConfig) -> Vec<usize> {
    let n = model.sizes.len();
    let dreloc = set_dreloc(model);
    let mut start: Vec<Option<i64>> = vec![None; n];
    let mut placed: Vec<usize> = Vec::new();
    let mut plsize: i64 = 0;
    let place = |b: usize, placed: &mut Vec<usize>, plsize: &mut i64, start: &mut [Option<i64>]| {
        *plsize += model.sizes[b] as i64;
        start[b] = Some(-*plsize);
        placed.insert(0, b);
    };
    if let Some(p) = model.pinned_last {
        place(p, &mut placed, &mut plsize, &mut start);
    }
    let mut unplaced: Vec<usize> = (0..n).filter(|&b| Some(b) != model.pinned_last).collect();
    unplaced.sort_by_key(|&b| (model.keys.get(b).copied().unwrap_or(0), b));
    while !unplaced.is_empty() {
        let mut best = (-1.0f64, 0usize);
        for (slot, &b1) in unplaced.iter().enumerate() {
            let ties = update_ties(model, cfg, b1, &start, plsize);
            let w: f64 = (0..cfg.spans.len())
                .map(|s| worth(model, cfg, b1, &ties, dreloc[b1], plsize, s))
                .sum();
            if w > best.0 {
                best = (w, slot);
            }
        }
        let b = unplaced.remove(best.1);
        place(b, &mut placed, &mut plsize, &mut start);
    }
    placed
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(s0: bool, s1: bool) -> HeuristicConfig {
        HeuristicConfig::for_arch(ArchSpec::sdm1(), s0, s1)
    }

    fn two_blocks(d0: u32, d1: u32, size1: u32) -> BlockModel {
        let mut data_refs = Vec::new();
        for _ in 0..d0 {
            data_refs.push(DataRef { src: 0, src_off: 0, data_off: 0 });
        }
        for _ in 0..d1 {
            data_refs.push(DataRef { src: 1, src_off: 0, data_off: 0 });
        }
        BlockModel { sizes: vec![20, size1], keys: vec![0, 20], data_refs, data_size: 64, ..Default::default() }
    }

    fn total(model: &BlockModel, c: &HeuristicConfig, b: usize) -> f64 {
        let d = set_dreloc(model);
        let t = update_ties(model, c, b, &vec![None; model.sizes.len()], 0);
        (0..c.spans.len()).map(|s| worth(model, c, b, &t, d[b], 0, s)).sum()
    }

    #[test]
    fn spans_and_savings() {
        let c = cfg(true, true);
        assert_eq!(c.spans[0], SpanEntry { lo: -126, hi: 129, saved: 3 });
        assert_eq!(c.spans[1], SpanEntry { lo: -32766, hi: 32769, saved: 2 });
    }

    #[test]
    fn no_data_refs_and_no_ties_is_worthless() {
        let m = two_blocks(0, 0, 20);
        assert_eq!(total(&m, &cfg(true, true), 0), 0.0);
    }

    #[test]
    fn sigma0_is_linear_in_dreloc() {
        let m = two_blocks(4, 2, 20);
        let c = cfg(true, false);
        let (a, b) = (total(&m, &c, 0), total(&m, &c, 1));
        assert!(a > 0.0);
        assert!((a / b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sigma0_penalizes_size() {
        let c = cfg(true, false);
        let small = total(&two_blocks(3, 3, 20), &c, 1);
        let big = total(&two_blocks(3, 3, 40), &c, 1);
        assert!(big < small);
    }

    #[test]
    fn data_reach_clamps() {
        let sp = SpanEntry { lo: -126, hi: 129, saved: 3 };
        assert_eq!(data_reach(64, 10, 0, &sp), 1.0);
        assert_eq!(data_reach(64, 10, 1000, &sp), 0.0);
        assert_eq!(data_reach(0, 10, 0, &sp), 0.0);
        let partial = data_reach(1000, 10, 0, &sp);
        assert!(partial > 0.0 && partial < 1.0);
    }

    #[test]
    fn single_block_stays() {
        let m = BlockModel { sizes: vec![5], keys: vec![0], ..Default::default() };
        assert_eq!(code_distribution(&m, &cfg(true, true)), vec![0]);
    }

    #[test]
    fn densest_data_user_goes_last() {
        // three equal blocks; block 1 has the most data references
        let mut m = BlockModel { sizes: vec![30, 30, 30], keys: vec![0, 30, 60], data_size: 400, ..Default::default() };
        for (b, k) in [(0, 1), (1, 5), (2, 2)] {
            for _ in 0..k {
                m.data_refs.push(DataRef { src: b, src_off: 0, data_off: 0 });
            }
        }
        let order = code_distribution(&m, &cfg(true, false));
        assert_eq!(*order.last().unwrap(), 1);
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn pinned_block_stays_last() {
        let mut m = two_blocks(0, 9, 20);
        m.pinned_last = Some(0);
        assert_eq!(code_distribution(&m, &cfg(true, true)), vec![1, 0]);
    }
}
