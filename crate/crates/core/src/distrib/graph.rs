//! Weighted arrangement graphs: spans, threshold and additive costs, the
//! reduction from linear arrangement, and an exhaustive solver.

use itertools::Itertools;
use thiserror::Error;

/// Largest graph the exhaustive solver accepts.
pub const BRUTE_FORCE_LIMIT: usize = 9;

/// An inter-block reference. `w` is (s, s', t, t'): the source sits `s`
/// bytes into its block with `s'` bytes after it, the target `t` bytes into
/// its block with `t'` after it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub w: [u64; 4],
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ArrangementGraph {
    pub weights: Vec<u64>,
    pub edges: Vec<Edge>,
}

/// `psi[v]` is the 1-based position of vertex `v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arrangement {
    pub psi: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("edge {0} -> {0} is a self-loop")]
    SelfLoop(usize),
    #[error("vertex {0} out of range")]
    NoSuchVertex(usize),
    #[error("{0} vertices exceeds the exhaustive search limit of {BRUTE_FORCE_LIMIT}")]
    TooLarge(usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl Arrangement {
    pub fn identity(n: usize) -> Arrangement {
        Arrangement { psi: (1..=n).collect() }
    }

    /// Builds ψ from vertices listed in position order.
    pub fn from_order(order: &[usize]) -> Arrangement {
        let mut psi = vec![0; order.len()];
        for (i, &v) in order.iter().enumerate() {
            psi[v] = i + 1;
        }
        Arrangement { psi }
    }

    /// Vertices in position order.
    pub fn order(&self) -> Vec<usize> {
        let mut order = vec![0; self.psi.len()];
        for (v, &p) in self.psi.iter().enumerate() {
            order[p - 1] = v;
        }
        order
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.psi.len()];
        self.psi.iter().all(|&p| p >= 1 && p <= seen.len() && !std::mem::replace(&mut seen[p - 1], true))
    }
}

impl ArrangementGraph {
    pub fn new(weights: Vec<u64>) -> ArrangementGraph {
        ArrangementGraph { weights, edges: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn add_edge(&mut self, src: usize, dst: usize, w: [u64; 4]) -> Result<(), GraphError> {
        for v in [src, dst] {
            if v >= self.len() {
                return Err(GraphError::NoSuchVertex(v));
            }
        }
        if src == dst {
            return Err(GraphError::SelfLoop(src));
        }
        self.edges.push(Edge { src, dst, w });
        Ok(())
    }

    /// Parses `v <id> <weight>` and `e <src> <dst> s s' t t'` lines. Vertex ids
    /// must be 0..n in order; `#` starts a comment.
    pub fn parse(text: &str) -> Result<ArrangementGraph, GraphError> {
        let mut g = ArrangementGraph::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: &str| GraphError::Parse { line, msg: msg.to_string() };
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let mut fields = body.split_whitespace();
            let kind = fields.next().unwrap_or("");
            let nums: Vec<u64> = fields
                .map(|f| f.parse::<u64>().map_err(|_| err(&format!("bad number {f:?}"))))
                .collect::<Result<_, _>>()?;
            match (kind, nums.as_slice()) {
                ("v", [id, w]) => {
                    if *id as usize != g.len() {
                        return Err(err("vertex ids must be consecutive from 0"));
                    }
                    g.weights.push(*w);
                }
                ("e", [s, d, a, b, c, e]) => g
                    .add_edge(*s as usize, *d as usize, [*a, *b, *c, *e])
                    .map_err(|e| err(&e.to_string()))?,
                _ => return Err(err("expected `v <id> <weight>` or `e <src> <dst> s s' t t'`")),
            }
        }
        Ok(g)
    }
}

/// Endpoint bytes plus the weight of every vertex strictly between.
pub fn span_of(g: &ArrangementGraph, a: &Arrangement, e: &Edge) -> u64 {
    let (ps, pd) = (a.psi[e.src], a.psi[e.dst]);
    let endpoints = if ps < pd { e.w[1] + e.w[2] } else { e.w[0] + e.w[3] };
    let (lo, hi) = (ps.min(pd), ps.max(pd));
    let interposed: u64 = g
        .weights
        .iter()
        .zip(&a.psi)
        .filter(|(_, &p)| p > lo && p < hi)
        .map(|(w, _)| w)
        .sum();
    endpoints + interposed
}

/// Number of edges whose span is at least `t`.
pub fn tcf(g: &ArrangementGraph, a: &Arrangement, t: u64) -> usize {
    g.edges.iter().filter(|e| span_of(g, a, e) >= t).count()
}

/// Sum over edges of the distance between endpoint positions.
pub fn acf(g: &ArrangementGraph, a: &Arrangement) -> usize {
    g.edges.iter().map(|e| a.psi[e.src].abs_diff(a.psi[e.dst])).sum()
}

/// Maps a linear arrangement instance to a threshold instance with the same
/// cost under every ordering: each edge becomes a bundle of |V|-1 edges
/// weighted (i, i, i, i), every vertex weighs 2, and T = 2|V| - 2.
pub fn reduce_minla_to_minlta(g: &ArrangementGraph) -> (ArrangementGraph, u64) {
    let n = g.len() as u64;
    let mut w = ArrangementGraph::new(vec![2; g.len()]);
    for e in &g.edges {
        for i in 1..n {
            w.edges.push(Edge { src: e.src, dst: e.dst, w: [i, i, i, i] });
        }
    }
    (w, (2 * n).saturating_sub(2))
}

/// Minimum-TCF arrangement by enumerating every ψ in lexicographic order; the
/// first minimum wins.
pub fn brute_force_arrangement(g: &ArrangementGraph, t: u64) -> Result<(Arrangement, usize), GraphError> {
    let n = g.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(GraphError::TooLarge(n));
    }
    let mut best: Option<(Arrangement, usize)> = None;
    for perm in (1..=n).permutations(n) {
        let a = Arrangement { psi: perm };
        let c = tcf(g, &a, t);
        if best.as_ref().is_none_or(|(_, b)| c < *b) {
            best = Some((a, c));
        }
    }
    Ok(best.unwrap_or((Arrangement::identity(0), 0)))
}

/// Greedy arrangement from the far end backwards: each step places at the
/// head of the placed list the vertex with the most edges to placed vertices
/// whose span would stay below `t`. Ties go to the lowest vertex id.
pub fn heuristic_arrangement(g: &ArrangementGraph, t: u64) -> Arrangement {
    let n = g.len();
    let mut placed: Vec<usize> = Vec::new();
    let mut unplaced: Vec<usize> = (0..n).collect();
    while !unplaced.is_empty() {
        let mut best = (-1i64, 0usize);
        for (slot, &b) in unplaced.iter().enumerate() {
            let mut w = 0i64;
            for e in &g.edges {
                let (other, from_b) = if e.src == b {
                    (e.dst, true)
                } else if e.dst == b {
                    (e.src, false)
                } else {
                    continue;
                };
                let Some(pos) = placed.iter().position(|&p| p == other) else { continue };
                let between: u64 = placed[..pos].iter().map(|&p| g.weights[p]).sum();
                // b sits before `other`
                let endpoints = if from_b { e.w[1] + e.w[2] } else { e.w[0] + e.w[3] };
                if endpoints + between < t {
                    w += 1;
                }
            }
            if w > best.0 {
                best = (w, slot);
            }
        }
        let b = unplaced.remove(best.1);
        placed.insert(0, b);
    }
    Arrangement::from_order(&placed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abg() -> (ArrangementGraph, Edge) {
        let mut g = ArrangementGraph::new(vec![10, 6, 8]);
        g.add_edge(0, 2, [4, 6, 2, 6]).unwrap();
        let e = g.edges[0];
        (g, e)
    }

    #[test]
    fn span_follows_orientation() {
        let (g, e) = abg();
        assert_eq!(span_of(&g, &Arrangement::from_order(&[0, 1, 2]), &e), 14);
        assert_eq!(span_of(&g, &Arrangement::from_order(&[2, 1, 0]), &e), 16);
        assert_eq!(tcf(&g, &Arrangement::from_order(&[0, 1, 2]), 15), 0);
        assert_eq!(tcf(&g, &Arrangement::from_order(&[2, 1, 0]), 15), 1);
        assert_eq!(tcf(&g, &Arrangement::identity(3), 0), 1);
    }

    #[test]
    fn adjacent_zero_weight_edge_has_zero_span() {
        let mut g = ArrangementGraph::new(vec![5, 5]);
        g.add_edge(0, 1, [0; 4]).unwrap();
        assert_eq!(span_of(&g, &Arrangement::identity(2), &g.edges[0]), 0);
    }

    #[test]
    fn acf_examples() {
        let mut g = ArrangementGraph::new(vec![1; 3]);
        g.add_edge(0, 1, [0; 4]).unwrap();
        g.add_edge(1, 2, [0; 4]).unwrap();
        assert_eq!(acf(&g, &Arrangement::identity(3)), 2);
        let mut h = ArrangementGraph::new(vec![1; 5]);
        h.add_edge(0, 4, [0; 4]).unwrap();
        assert_eq!(acf(&h, &Arrangement::identity(5)), 4);
    }

    #[test]
    fn reduction_builds_bundles() {
        let mut g = ArrangementGraph::new(vec![1; 3]);
        g.add_edge(0, 2, [0; 4]).unwrap();
        let (w, t) = reduce_minla_to_minlta(&g);
        assert_eq!(t, 4);
        assert_eq!(w.weights, vec![2, 2, 2]);
        let ws: Vec<[u64; 4]> = w.edges.iter().map(|e| e.w).collect();
        assert_eq!(ws, vec![[1; 4], [2; 4]]);
        let (empty, _) = reduce_minla_to_minlta(&ArrangementGraph::new(vec![1; 4]));
        assert!(empty.edges.is_empty());
    }

    #[test]
    fn self_loops_and_bad_vertices_are_rejected() {
        let mut g = ArrangementGraph::new(vec![1; 2]);
        assert_eq!(g.add_edge(1, 1, [0; 4]), Err(GraphError::SelfLoop(1)));
        assert_eq!(g.add_edge(0, 2, [0; 4]), Err(GraphError::NoSuchVertex(2)));
    }

    #[test]
    fn brute_force_ties_and_guard() {
        let g = ArrangementGraph::new(vec![3; 4]);
        let (a, c) = brute_force_arrangement(&g, 1).unwrap();
        assert_eq!((a, c), (Arrangement::identity(4), 0));
        let mut h = ArrangementGraph::new(vec![1, 1]);
        h.add_edge(0, 1, [1; 4]).unwrap();
        assert_eq!(brute_force_arrangement(&h, 1000).unwrap().1, 0);
        let big = ArrangementGraph::new(vec![1; 10]);
        assert_eq!(brute_force_arrangement(&big, 1), Err(GraphError::TooLarge(10)));
    }

    #[test]
    fn parses_text_form() {
        let g = ArrangementGraph::parse("# demo\nv 0 10\nv 1 6\nv 2 8\ne 0 2 4 6 2 6\n").unwrap();
        assert_eq!(g, abg().0);
        assert!(matches!(ArrangementGraph::parse("v 1 3"), Err(GraphError::Parse { line: 1, .. })));
        assert!(matches!(ArrangementGraph::parse("v 0 3\ne 0 0 1 1 1 1"), Err(GraphError::Parse { line: 2, .. })));
    }

    #[test]
    fn arrangement_round_trip() {
        let a = Arrangement::from_order(&[2, 0, 1]);
        assert_eq!(a.psi, vec![2, 3, 1]);
        assert_eq!(a.order(), vec![2, 0, 1]);
        assert!(a.is_bijection());
        assert!(!Arrangement { psi: vec![1, 1] }.is_bijection());
    }
}
