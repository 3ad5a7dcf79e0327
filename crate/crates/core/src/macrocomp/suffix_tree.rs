//! McCreight's linear-time suffix tree over interned tokens.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SuffixTreeError {
    #[error("the final token must occur exactly once")]
    TerminalNotUnique,
    #[error("empty token string")]
    Empty,
}

#[derive(Debug, Clone)]
struct StNode {
    /// Edge label into this node is `text[start..end]`.
    start: usize,
    end: usize,
    parent: usize,
    depth: usize,
    children: BTreeMap<u32, usize>,
    link: Option<usize>,
    /// Suffix start for leaves.
    leaf: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SuffixTree {
    text: Vec<u32>,
    nodes: Vec<StNode>,
}

pub const ROOT: usize = 0;

impl SuffixTree {
    /// Builds the tree. The last token must be a terminal that appears nowhere
    /// else, so every suffix ends at a leaf.
    pub fn new(text: Vec<u32>) -> Result<SuffixTree, SuffixTreeError> {
        let n = text.len();
        let Some(&term) = text.last() else { return Err(SuffixTreeError::Empty) };
        if text[..n - 1].contains(&term) {
            return Err(SuffixTreeError::TerminalNotUnique);
        }
        let root = StNode { start: 0, end: 0, parent: ROOT, depth: 0, children: BTreeMap::new(), link: Some(ROOT), leaf: None };
        let mut t = SuffixTree { text, nodes: vec![root] };
        let mut head = ROOT;
        t.add_leaf(ROOT, 0, 0);
        for i in 1..n {
            head = t.insert(i, head);
        }
        Ok(t)
    }

    fn add_leaf(&mut self, parent: usize, at: usize, suffix: usize) {
        let n = self.text.len();
        let id = self.nodes.len();
        self.nodes.push(StNode {
            start: at,
            end: n,
            parent,
            depth: n - suffix,
            children: BTreeMap::new(),
            link: None,
            leaf: Some(suffix),
        });
        self.nodes[parent].children.insert(self.text[at], id);
    }

    /// Splits the edge into `child` after `len` tokens; returns the new node.
    fn split(&mut self, child: usize, len: usize) -> usize {
        let c = &self.nodes[child];
        let (parent, start) = (c.parent, c.start);
        let id = self.nodes.len();
        let depth = self.nodes[parent].depth + len;
        let mut children = BTreeMap::new();
        children.insert(self.text[start + len], child);
        self.nodes.push(StNode { start, end: start + len, parent, depth, children, link: None, leaf: None });
        self.nodes[child].start = start + len;
        self.nodes[child].parent = id;
        self.nodes[parent].children.insert(self.text[start], id);
        id
    }

    /// Walks down `len` tokens starting at `text[q]` from `v`, trusting that
    /// the path exists. Returns the node at the end and whether it was created.
    fn rescan(&mut self, mut v: usize, mut q: usize, mut len: usize) -> (usize, bool) {
        while len > 0 {
            let child = self.nodes[v].children[&self.text[q]];
            let elen = self.nodes[child].end - self.nodes[child].start;
            if len < elen {
                return (self.split(child, len), true);
            }
            v = child;
            q += elen;
            len -= elen;
        }
        (v, false)
    }

    /// Matches suffix `i` below `v` token by token and hangs its leaf.
    fn scan(&mut self, mut v: usize, i: usize) -> usize {
        let mut q = i + self.nodes[v].depth;
        loop {
            let Some(&child) = self.nodes[v].children.get(&self.text[q]) else {
                self.add_leaf(v, q, i);
                return v;
            };
            let (s, e) = (self.nodes[child].start, self.nodes[child].end);
            let mut j = 0;
            while j < e - s && self.text[s + j] == self.text[q + j] {
                j += 1;
            }
            if j == e - s {
                v = child;
                q += j;
                continue;
            }
            let m = self.split(child, j);
            self.add_leaf(m, q + j, i);
            return m;
        }
    }

    /// Inserts suffix `i` given the head of suffix `i - 1`; returns the new
    /// head.
    fn insert(&mut self, i: usize, prev_head: usize) -> usize {
        if prev_head == ROOT {
            return self.scan(ROOT, i);
        }
        let d = self.nodes[prev_head].depth;
        let p = self.nodes[prev_head].parent;
        let s = if p == ROOT { ROOT } else { self.nodes[p].link.expect("parent of a head has a suffix link") };
        let sd = self.nodes[s].depth;
        let (w, created) = self.rescan(s, i + sd, d - 1 - sd);
        self.nodes[prev_head].link = Some(w);
        if created {
            let at = i + self.nodes[w].depth;
            self.add_leaf(w, at, i);
            w
        } else {
            self.scan(w, i)
        }
    }

    pub fn text(&self) -> &[u32] {
        &self.text
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_leaf(&self, v: usize) -> bool {
        self.nodes[v].leaf.is_some()
    }

    pub fn children(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.nodes[v].children.values().copied()
    }

    /// String depth in tokens.
    pub fn depth(&self, v: usize) -> usize {
        self.nodes[v].depth
    }

    pub fn suffix_link(&self, v: usize) -> Option<usize> {
        self.nodes[v].link
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.leaf.is_some()).count()
    }

    /// Internal nodes other than the root, in creation order.
    pub fn internal_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (1..self.nodes.len()).filter(|&v| self.nodes[v].leaf.is_none())
    }

    /// Suffix starts of all leaves below `v`, ascending.
    pub fn occurrences(&self, v: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![v];
        while let Some(x) = stack.pop() {
            match self.nodes[x].leaf {
                Some(s) => out.push(s),
                None => stack.extend(self.nodes[x].children.values()),
            }
        }
        out.sort_unstable();
        out
    }

    /// One text position where the path label of `v` occurs.
    pub fn label_start(&self, v: usize) -> usize {
        self.nodes[v].end - self.nodes[v].depth
    }

    /// Tokens spelled from the root to `v`.
    pub fn path_label(&self, v: usize) -> &[u32] {
        let s = self.label_start(v);
        &self.text[s..s + self.nodes[v].depth]
    }

    /// Leaves below each node, indexed by node.
    pub fn leaf_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.nodes.len()];
        // deepest first, so every child is done before its parent
        let mut by_depth: Vec<usize> = (0..self.nodes.len()).collect();
        by_depth.sort_by_key(|&v| std::cmp::Reverse(self.nodes[v].depth));
        for v in by_depth {
            if self.nodes[v].leaf.is_some() {
                counts[v] += 1;
            }
            if v != ROOT {
                counts[self.nodes[v].parent] += counts[v];
            }
        }
        counts
    }

    /// Number of places `pattern` occurs in the text.
    pub fn count(&self, pattern: &[u32]) -> usize {
        let mut v = ROOT;
        let mut k = 0;
        while k < pattern.len() {
            let Some(&child) = self.nodes[v].children.get(&pattern[k]) else { return 0 };
            let (s, e) = (self.nodes[child].start, self.nodes[child].end);
            for j in s..e {
                if k == pattern.len() {
                    break;
                }
                if self.text[j] != pattern[k] {
                    return 0;
                }
                k += 1;
            }
            v = child;
        }
        if pattern.is_empty() {
            return self.text.len();
        }
        self.occurrences(v).len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tree(s: &str) -> SuffixTree {
        SuffixTree::new(s.bytes().map(u32::from).collect()).unwrap()
    }

    fn labels(t: &SuffixTree) -> Vec<(String, usize)> {
        let mut v: Vec<(String, usize)> = t
            .internal_nodes()
            .map(|v| (t.path_label(v).iter().map(|&c| c as u8 as char).collect(), t.occurrences(v).len()))
            .collect();
        v.sort();
        v
    }

    fn naive(text: &[u32], pat: &[u32]) -> usize {
        text.windows(pat.len()).filter(|w| *w == pat).count()
    }

    fn check_shape(t: &SuffixTree) {
        let n = t.text().len();
        assert_eq!(t.leaf_count(), n);
        for v in t.internal_nodes() {
            assert!(t.children(v).count() >= 2);
            let link = t.suffix_link(v).expect("internal nodes carry suffix links");
            assert_eq!(t.path_label(link), &t.path_label(v)[1..]);
        }
        for v in 0..t.len() {
            if let Some(s) = t.nodes[v].leaf {
                assert_eq!(t.path_label(v), &t.text()[s..]);
            }
        }
    }

    #[test]
    fn abcab() {
        let t = tree("abcab$");
        check_shape(&t);
        assert_eq!(labels(&t), vec![("ab".into(), 2), ("b".into(), 2)]);
    }

    #[test]
    fn aaaa() {
        let t = tree("aaaa$");
        check_shape(&t);
        assert_eq!(labels(&t), vec![("a".into(), 4), ("aa".into(), 3), ("aaa".into(), 2)]);
        assert_eq!(t.count(&[b'a' as u32; 2]), 3);
    }

    #[test]
    fn terminal_must_be_unique() {
        assert_eq!(SuffixTree::new(vec![1, 2, 1]).unwrap_err(), SuffixTreeError::TerminalNotUnique);
        assert_eq!(SuffixTree::new(vec![]).unwrap_err(), SuffixTreeError::Empty);
        assert_eq!(SuffixTree::new(vec![7]).unwrap().leaf_count(), 1);
    }

    #[test]
    fn mississippi() {
        let t = tree("mississippi$");
        check_shape(&t);
        let m: Vec<u32> = "mississippi".bytes().map(u32::from).collect();
        for len in 1..=4 {
            for w in m.windows(len) {
                assert_eq!(t.count(w), naive(&m, w));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn counts_match_naive(body in proptest::collection::vec(0u32..4, 0..60)) {
            let mut text = body.clone();
            text.push(99);
            let t = SuffixTree::new(text.clone()).unwrap();
            check_shape(&t);
            for v in t.internal_nodes() {
                let lab = t.path_label(v);
                prop_assert_eq!(t.occurrences(v).len(), naive(&text, lab));
                prop_assert!(t.occurrences(v).len() >= 2);
                prop_assert_eq!(t.leaf_counts()[v], t.occurrences(v).len());
            }
            for len in 1..=3 {
                for w in body.windows(len) {
                    prop_assert_eq!(t.count(w), naive(&text, w));
                }
            }
        }
    }
}
