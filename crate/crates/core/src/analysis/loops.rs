//! Loop detection by iterated strongly-connected-component decomposition.
//!
//! Each nontrivial SCC is a loop. Its headers are the blocks entered from
//! outside the SCC. Edges from inside the body into the headers are
//! removed and the body is decomposed again to find nested loops. The one
//! exception is a retreating edge into the first block from a latch that
//! ends before the loop's last latch: it belongs to an inner loop sharing
//! the header and is kept for the next round.

use std::cmp::Reverse;
use std::collections::{BTreeSet, HashSet};

use petgraph::algo::tarjan_scc;
use petgraph::graphmap::DiGraphMap;
use serde::Serialize;

use super::cfg::Cfg;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Loop {
    pub loop_id: usize,
    /// Blocks entered from outside the body, in address order.
    pub headers: Vec<usize>,
    pub body: BTreeSet<usize>,
    /// `(from, to)` block pairs.
    pub back_edges: Vec<(usize, usize)>,
    pub exit_edges: Vec<(usize, usize)>,
    pub entry_edges: Vec<(usize, usize)>,
    pub parent: Option<usize>,
    /// Address of the lowest body instruction.
    pub body_start: u32,
    /// Address of the last instruction of the latest latch.
    pub end_pc: u32,
    pub multi_entry: bool,
    /// Whether the body covers exactly the addresses `[body_start, end_pc]`.
    pub contiguous: bool,
}

impl Loop {
    pub fn after_pc(&self) -> u32 {
        self.end_pc + 4
    }

    pub fn contains_pc(&self, pc: u32) -> bool {
        pc >= self.body_start && pc <= self.end_pc
    }

    /// Distinct entry blocks, in address order.
    pub fn entry_targets(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.entry_edges.iter().map(|&(_, v)| v).collect();
        set.into_iter().collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LoopForest {
    /// Sorted by body start, enclosing loops before the loops they contain.
    pub loops: Vec<Loop>,
}

impl LoopForest {
    pub fn children(&self, id: usize) -> impl Iterator<Item = &Loop> {
        self.loops.iter().filter(move |l| l.parent == Some(id))
    }

    pub fn depth(&self, id: usize) -> usize {
        let mut d = 0;
        let mut cur = self.loops[id].parent;
        while let Some(p) = cur {
            d += 1;
            cur = self.loops[p].parent;
        }
        d
    }

    /// Whether loop `inner` is `outer` or nested inside it.
    pub fn is_within(&self, inner: usize, outer: usize) -> bool {
        let mut cur = Some(inner);
        while let Some(c) = cur {
            if c == outer {
                return true;
            }
            cur = self.loops[c].parent;
        }
        false
    }

    /// Innermost loop whose body contains `pc`.
    pub fn innermost_at(&self, pc: u32) -> Option<usize> {
        self.loops.iter().filter(|l| l.contains_pc(pc)).max_by_key(|l| self.depth(l.loop_id)).map(|l| l.loop_id)
    }
}

/// Finds every loop of `cfg`. Acyclic graphs give an empty forest.
pub fn find_loops(cfg: &Cfg) -> LoopForest {
    let all: BTreeSet<usize> = cfg.blocks.iter().map(|b| b.id).collect();
    let mut raw = Vec::new();
    discover(cfg, &all, &HashSet::new(), None, &mut raw);

    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by_key(|&i| {
        let l: &Loop = &raw[i];
        (l.body_start, Reverse(l.end_pc), Reverse(l.body.len()))
    });
    let mut new_id = vec![0; raw.len()];
    for (n, &old) in order.iter().enumerate() {
        new_id[old] = n;
    }
    let mut loops: Vec<Loop> = order
        .iter()
        .map(|&old| {
            let mut l = raw[old].clone();
            l.loop_id = new_id[old];
            l.parent = l.parent.map(|p| new_id[p]);
            l
        })
        .collect();
    for l in &mut loops {
        let span: BTreeSet<usize> =
            cfg.blocks.iter().filter(|b| b.start >= l.body_start && b.start <= l.end_pc).map(|b| b.id).collect();
        l.contiguous = span == l.body;
    }
    LoopForest { loops }
}

fn discover(
    cfg: &Cfg,
    nodes: &BTreeSet<usize>,
    removed: &HashSet<(usize, usize)>,
    parent: Option<usize>,
    out: &mut Vec<Loop>,
) {
    let mut g = DiGraphMap::<usize, ()>::new();
    for &n in nodes {
        g.add_node(n);
    }
    for e in &cfg.edges {
        if nodes.contains(&e.from) && nodes.contains(&e.to) && !removed.contains(&(e.from, e.to)) {
            g.add_edge(e.from, e.to, ());
        }
    }
    for scc in tarjan_scc(&g) {
        let body: BTreeSet<usize> = scc.iter().copied().collect();
        let first = *body.iter().next().expect("SCCs are nonempty");
        if body.len() == 1 && !g.contains_edge(first, first) {
            continue;
        }
        let mut headers: Vec<usize> = body
            .iter()
            .copied()
            .filter(|&n| n == 0 || cfg.predecessors(n).any(|e| !body.contains(&e.from)))
            .collect();
        if headers.is_empty() {
            headers.push(first);
        }
        let start_of = |b: usize| cfg.blocks[b].start;
        let into_headers: Vec<(usize, usize)> = g
            .all_edges()
            .filter(|&(u, v, _)| body.contains(&u) && headers.contains(&v))
            .map(|(u, v, _)| (u, v))
            .collect();
        let retreating: Vec<(usize, usize)> =
            into_headers.iter().copied().filter(|&(u, h)| start_of(h) <= start_of(u)).collect();
        let latches = if retreating.is_empty() { &into_headers } else { &retreating };
        let end_pc = latches.iter().map(|&(u, _)| cfg.blocks[u].end).max().expect("an SCC has an edge into a header");

        let mut next_removed = removed.clone();
        for &(u, h) in &into_headers {
            let nested_latch = h == first && start_of(h) <= start_of(u) && cfg.blocks[u].end < end_pc;
            if !nested_latch {
                next_removed.insert((u, h));
            }
        }
        let back_edges: Vec<(usize, usize)> =
            retreating.iter().copied().filter(|&(u, _)| cfg.blocks[u].end == end_pc).collect();
        let mut entry_edges = Vec::new();
        let mut exit_edges = Vec::new();
        for e in &cfg.edges {
            let (fi, ti) = (body.contains(&e.from), body.contains(&e.to));
            if !fi && ti {
                entry_edges.push((e.from, e.to));
            } else if fi && !ti {
                exit_edges.push((e.from, e.to));
            }
        }
        entry_edges.dedup();
        exit_edges.dedup();
        let entry_targets: BTreeSet<usize> = entry_edges.iter().map(|&(_, v)| v).collect();
        let id = out.len();
        out.push(Loop {
            loop_id: id,
            multi_entry: headers.len() > 1 || entry_targets.len() > 1,
            headers,
            body_start: start_of(first),
            end_pc,
            back_edges,
            exit_edges,
            entry_edges,
            parent,
            contiguous: true,
            body: body.clone(),
        });
        discover(cfg, &body, &next_removed, Some(id), out);
    }
}
