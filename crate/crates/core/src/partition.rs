//! Recursive graph bisection into a binary partition tree.
//!
//! Each bisection is multilevel: the graph is coarsened by heavy-edge
//! matching, the coarsest graph is split by a BFS level set and refined
//! with Fiduccia–Mattheyses passes, and the split is projected back and
//! refined again at every finer level. The left side is kept within
//! `⌈n/2⌉ ± n/4` buses. Buses are then renumbered so that every tree node
//! owns a contiguous range of matrix indices.

use std::collections::VecDeque;
use std::ops::Range;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::NetworkModel;

/// A bisection of a vertex set: both sides sorted ascending, plus the
/// crossing edges as `(left vertex, right vertex)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bisection {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub cut: Vec<(usize, usize)>,
}

/// Inclusive bounds on the left-side size: `⌈n/2⌉ ± n/4`, clamped so both
/// sides are nonempty.
pub fn balance_window(n: usize) -> (usize, usize) {
    let target = n.div_ceil(2) as f64;
    let slack = n as f64 / 4.0;
    let lo = ((target - slack).ceil() as usize).max(1);
    let hi = ((target + slack).floor() as usize).min(n - 1);
    (lo, hi.max(lo))
}

/// Bisects `vertices` (global ids) using `adjacency` (global, sorted lists;
/// edges leaving the set are ignored). Deterministic in its input.
pub fn bipartition(vertices: &[usize], adjacency: &[Vec<usize>]) -> Bisection {
    let mut verts = vertices.to_vec();
    verts.sort_unstable();
    verts.dedup();
    let n = verts.len();
    assert!(n >= 2, "bipartition needs at least two vertices");

    let local = |g: usize| verts.binary_search(&g).ok();
    let graph = Graph {
        vwgt: vec![1; n],
        adj: verts
            .iter()
            .map(|&g| adjacency[g].iter().filter_map(|&w| local(w)).map(|w| (w, 1)).collect())
            .collect(),
    };
    let side = multilevel_bisect(&graph);

    let mut left = Vec::new();
    let mut right = Vec::new();
    for (i, &s) in side.iter().enumerate() {
        if s == 0 {
            left.push(verts[i]);
        } else {
            right.push(verts[i]);
        }
    }
    let mut cut = Vec::new();
    for (i, nbrs) in graph.adj.iter().enumerate() {
        if side[i] != 0 {
            continue;
        }
        for &(w, _) in nbrs {
            if side[w] == 1 {
                cut.push((verts[i], verts[w]));
            }
        }
    }
    Bisection { left, right, cut }
}

/// Vertex- and edge-weighted graph; adjacency lists sorted by neighbour.
#[derive(Debug, Clone)]
struct Graph {
    vwgt: Vec<usize>,
    adj: Vec<Vec<(usize, u64)>>,
}

impl Graph {
    fn len(&self) -> usize {
        self.vwgt.len()
    }

    fn total_weight(&self) -> usize {
        self.vwgt.iter().sum()
    }
}

/// Coarsening stops at this many vertices.
const COARSEST: usize = 24;

fn multilevel_bisect(g: &Graph) -> Vec<u8> {
    let total = g.total_weight();
    let mut levels: Vec<(Graph, Vec<usize>)> = Vec::new();
    let mut cur = g.clone();
    while cur.len() > COARSEST {
        let (coarse, map) = coarsen(&cur, total);
        if coarse.len() * 10 > cur.len() * 9 {
            break;
        }
        levels.push((cur, map));
        cur = coarse;
    }
    let mut side = initial_split(&cur, total);
    while let Some((fine, map)) = levels.pop() {
        side = map.iter().map(|&c| side[c]).collect();
        fm_refine(&fine, &mut side, total);
    }
    side
}

/// Heavy-edge matching in vertex order: each unmatched vertex pairs with
/// the unmatched neighbour of largest edge weight (lowest index on ties),
/// as long as the merged weight stays below `total / 16 + 1`.
fn coarsen(g: &Graph, total: usize) -> (Graph, Vec<usize>) {
    let n = g.len();
    let cap = total / 16 + 1;
    let mut mate = vec![usize::MAX; n];
    for v in 0..n {
        if mate[v] != usize::MAX {
            continue;
        }
        let mut best: Option<(usize, u64)> = None;
        for &(w, wt) in &g.adj[v] {
            if w == v || mate[w] != usize::MAX || g.vwgt[v] + g.vwgt[w] > cap {
                continue;
            }
            if best.is_none_or(|(_, bw)| wt > bw) {
                best = Some((w, wt));
            }
        }
        match best {
            Some((w, _)) => {
                mate[v] = w;
                mate[w] = v;
            }
            None => mate[v] = v,
        }
    }
    let mut map = vec![usize::MAX; n];
    let mut vwgt = Vec::new();
    for v in 0..n {
        if map[v] != usize::MAX {
            continue;
        }
        let c = vwgt.len();
        map[v] = c;
        map[mate[v]] = c;
        vwgt.push(if mate[v] == v { g.vwgt[v] } else { g.vwgt[v] + g.vwgt[mate[v]] });
    }
    let mut adj: Vec<Vec<(usize, u64)>> = vec![Vec::new(); vwgt.len()];
    for v in 0..n {
        for &(w, wt) in &g.adj[v] {
            let (cv, cw) = (map[v], map[w]);
            if cv != cw {
                adj[cv].push((cw, wt));
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        let mut merged: Vec<(usize, u64)> = Vec::with_capacity(list.len());
        for &(w, wt) in list.iter() {
            match merged.last_mut() {
                Some((lw, lwt)) if *lw == w => *lwt += wt,
                _ => merged.push((w, wt)),
            }
        }
        *list = merged;
    }
    (Graph { vwgt, adj }, map)
}

fn eccentricity_and_last_level(g: &Graph, start: usize) -> (usize, Vec<usize>) {
    let mut dist = vec![usize::MAX; g.len()];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    let mut ecc = 0;
    while let Some(u) = queue.pop_front() {
        ecc = ecc.max(dist[u]);
        for &(w, _) in &g.adj[u] {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    let last = (0..g.len()).filter(|&v| dist[v] == ecc).collect();
    (ecc, last)
}

/// George–Liu pseudo-peripheral vertex search inside `start`'s component.
fn pseudo_peripheral(g: &Graph, start: usize) -> usize {
    let mut v = start;
    let (mut ecc, mut last) = eccentricity_and_last_level(g, v);
    loop {
        let cand = *last
            .iter()
            .min_by_key(|&&w| (g.adj[w].len(), w))
            .expect("nonempty level");
        let (e, l) = eccentricity_and_last_level(g, cand);
        if e <= ecc {
            return v;
        }
        v = cand;
        ecc = e;
        last = l;
    }
}

/// BFS order covering every component: `start`'s component first, the
/// rest in order of their smallest vertex, each from a pseudo-peripheral
/// vertex.
fn level_set_order(g: &Graph, start: usize) -> Vec<usize> {
    let n = g.len();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let starts = std::iter::once(start).chain(0..n);
    for s in starts {
        if seen[s] {
            continue;
        }
        let root = if s == start { s } else { pseudo_peripheral(g, s) };
        let from = order.len();
        order.push(root);
        seen[root] = true;
        let mut head = from;
        while head < order.len() {
            let u = order[head];
            head += 1;
            for &(w, _) in &g.adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    order.push(w);
                }
            }
        }
    }
    order
}

/// Level-set split of the coarsest graph. The pseudo-peripheral start and
/// every vertex are tried as BFS roots; the refined split with the smallest
/// `(cut, imbalance)` wins, earlier roots on ties.
fn initial_split(g: &Graph, total: usize) -> Vec<u8> {
    let n = g.len();
    let target = total.div_ceil(2);
    let roots = std::iter::once(pseudo_peripheral(g, 0)).chain(0..n);
    let mut best: Option<((u64, usize), Vec<u8>)> = None;
    for root in roots {
        let mut side = vec![1u8; n];
        let mut left = 0;
        for v in level_set_order(g, root) {
            if left >= target {
                break;
            }
            side[v] = 0;
            left += g.vwgt[v];
        }
        fm_refine(g, &mut side, total);
        let key = (cut_weight(g, &side), left_weight(g, &side).abs_diff(target));
        if best.as_ref().is_none_or(|(bk, _)| key < *bk) {
            best = Some((key, side));
        }
    }
    best.expect("at least one root").1
}

fn cut_weight(g: &Graph, side: &[u8]) -> u64 {
    (0..g.len())
        .filter(|&v| side[v] == 0)
        .flat_map(|v| g.adj[v].iter().filter(|&&(w, _)| side[w] == 1).map(|&(_, wt)| wt))
        .sum()
}

fn left_weight(g: &Graph, side: &[u8]) -> usize {
    (0..g.len()).filter(|&v| side[v] == 0).map(|v| g.vwgt[v]).sum()
}

/// Fiduccia–Mattheyses refinement with rollback to the best prefix.
///
/// Ordering among candidate moves: larger gain, then a resulting left
/// weight closer to `⌈total/2⌉`, then lower vertex index. The best prefix
/// minimizes `(cut, |left − ⌈total/2⌉|)`.
fn fm_refine(g: &Graph, side: &mut [u8], total: usize) {
    const MAX_PASSES: usize = 16;
    let n = g.len();
    let target = total.div_ceil(2);
    let (lo, hi) = balance_window(total);
    let imbalance = |left: usize| left.abs_diff(target);

    for _ in 0..MAX_PASSES {
        let mut gain: Vec<i64> = (0..n)
            .map(|v| {
                g.adj[v]
                    .iter()
                    .map(|&(w, wt)| if side[w] != side[v] { wt as i64 } else { -(wt as i64) })
                    .sum()
            })
            .collect();
        let mut cut = cut_weight(g, side) as i64;
        let mut left = left_weight(g, side);
        let start_key = (cut, imbalance(left));
        let mut best_key = start_key;
        let mut best_len = 0;
        let mut locked = vec![false; n];
        let mut moves = Vec::new();

        loop {
            let mut pick: Option<(usize, (i64, usize))> = None;
            for v in 0..n {
                if locked[v] {
                    continue;
                }
                let new_left = if side[v] == 0 { left - g.vwgt[v] } else { left + g.vwgt[v] };
                if new_left < lo || new_left > hi {
                    continue;
                }
                let key = (gain[v], imbalance(new_left));
                let better = match pick {
                    None => true,
                    Some((_, (bg, bi))) => key.0 > bg || (key.0 == bg && key.1 < bi),
                };
                if better {
                    pick = Some((v, key));
                }
            }
            let Some((v, (gv, _))) = pick else { break };
            let from = side[v];
            side[v] = 1 - from;
            locked[v] = true;
            left = if from == 0 { left - g.vwgt[v] } else { left + g.vwgt[v] };
            cut -= gv;
            gain[v] = -gv;
            for &(w, wt) in &g.adj[v] {
                // The edge v–w flipped between internal and external.
                if side[w] == side[v] {
                    gain[w] -= 2 * wt as i64;
                } else {
                    gain[w] += 2 * wt as i64;
                }
            }
            moves.push(v);
            let key = (cut, imbalance(left));
            if key < best_key {
                best_key = key;
                best_len = moves.len();
            }
        }
        for &v in &moves[best_len..] {
            side[v] = 1 - side[v];
        }
        if best_len == 0 || best_key >= start_key {
            break;
        }
    }
}

/// Coupling position between the two children of an internal node, in
/// tree-ordered matrix indices: `row` lies in the left child, `col` in the
/// right child. Parallel branches between one bus pair share one edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct CutEdge {
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub left: Option<usize>,
    pub right: Option<usize>,
    pub depth: usize,
    /// Positions of this node's buses in tree order.
    pub bus_range: Range<usize>,
    /// Matrix indices (tree order) of this node: `bus_range × phases`.
    pub index_range: Range<usize>,
    pub cut_edges: Vec<CutEdge>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.left.is_none()
    }

    pub fn n_buses(&self) -> usize {
        self.bus_range.len()
    }

    pub fn dim(&self) -> usize {
        self.index_range.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionTree {
    nodes: Vec<TreeNode>,
    root: usize,
    d_th: usize,
    phases: usize,
    /// `bus_order[pos]` is the original bus at tree position `pos`.
    bus_order: Vec<usize>,
    bus_position: Vec<usize>,
    leaf_of_bus: Vec<usize>,
}

#[derive(Serialize)]
struct NodeExport {
    id: usize,
    range: [usize; 2],
    left: Option<usize>,
    right: Option<usize>,
    cut_edge_count: usize,
}

#[derive(Serialize)]
struct TreeExport {
    d_th: usize,
    phases: usize,
    nodes: Vec<NodeExport>,
    permutation: Vec<usize>,
}

/// Builds the partition tree of `net`'s bus graph with leaves of at most
/// `d_th` buses.
pub fn build_partition_tree(net: &NetworkModel, d_th: usize) -> Result<PartitionTree> {
    PartitionTree::from_adjacency(&net.adjacency(), net.phases(), d_th)
}

impl PartitionTree {
    pub fn from_adjacency(adjacency: &[Vec<usize>], phases: usize, d_th: usize) -> Result<Self> {
        if d_th == 0 {
            return Err(Error::Config("d_th must be >= 1".into()));
        }
        let n = adjacency.len();
        if n == 0 {
            return Err(Error::Config("cannot partition an empty network".into()));
        }
        let mut b = Builder {
            adjacency,
            d_th,
            nodes: Vec::new(),
            bus_order: Vec::with_capacity(n),
            pending_cuts: Vec::new(),
        };
        let root = b.build((0..n).collect(), None, 0);

        let mut bus_position = vec![usize::MAX; n];
        for (pos, &bus) in b.bus_order.iter().enumerate() {
            bus_position[bus] = pos;
        }
        let mut nodes = b.nodes;
        for (id, cut) in b.pending_cuts {
            let mut edges: Vec<CutEdge> = cut
                .iter()
                .flat_map(|&(a, c)| {
                    let (pa, pc) = (bus_position[a], bus_position[c]);
                    (0..phases).map(move |p| CutEdge {
                        row: pa * phases + p,
                        col: pc * phases + p,
                    })
                })
                .collect();
            edges.sort_unstable();
            nodes[id].cut_edges = edges;
        }
        for node in &mut nodes {
            node.index_range = node.bus_range.start * phases..node.bus_range.end * phases;
        }
        let mut leaf_of_bus = vec![usize::MAX; n];
        for node in nodes.iter().filter(|nd| nd.is_leaf()) {
            for pos in node.bus_range.clone() {
                leaf_of_bus[b.bus_order[pos]] = node.id;
            }
        }
        Ok(Self {
            nodes,
            root,
            d_th,
            phases,
            bus_order: b.bus_order,
            bus_position,
            leaf_of_bus,
        })
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn d_th(&self) -> usize {
        self.d_th
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn n_buses(&self) -> usize {
        self.bus_order.len()
    }

    pub fn dim(&self) -> usize {
        self.bus_order.len() * self.phases
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn height(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn bus_order(&self) -> &[usize] {
        &self.bus_order
    }

    pub fn bus_position(&self, bus: usize) -> usize {
        self.bus_position[bus]
    }

    /// Tree-order matrix index of `(bus, phase)`.
    pub fn tree_index(&self, bus: usize, phase: usize) -> usize {
        self.bus_position[bus] * self.phases + phase
    }

    /// `old_of_new` matrix-index permutation: tree index `i` holds original
    /// index `perm[i]`.
    pub fn matrix_permutation(&self) -> Vec<usize> {
        let p = self.phases;
        self.bus_order
            .iter()
            .flat_map(|&bus| (0..p).map(move |ph| bus * p + ph))
            .collect()
    }

    /// Original-order vector to tree order.
    pub fn to_tree_order(&self, x: &[f64]) -> Vec<f64> {
        self.matrix_permutation().iter().map(|&old| x[old]).collect()
    }

    /// Tree-order vector back to original order.
    pub fn to_original_order(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (new, old) in self.matrix_permutation().into_iter().enumerate() {
            out[old] = x[new];
        }
        out
    }

    pub fn locate_leaf(&self, bus: usize) -> Result<usize> {
        self.leaf_of_bus.get(bus).copied().ok_or(Error::UnknownBus(bus))
    }

    /// Leaf owning a tree-order matrix index.
    pub fn leaf_of_index(&self, idx: usize) -> usize {
        self.leaf_of_bus[self.bus_order[idx / self.phases]]
    }

    /// Lowest common ancestor of two tree nodes.
    pub fn lca(&self, a: usize, b: usize) -> usize {
        let (mut a, mut b) = (a, b);
        while self.nodes[a].depth > self.nodes[b].depth {
            a = self.nodes[a].parent.expect("non-root has parent");
        }
        while self.nodes[b].depth > self.nodes[a].depth {
            b = self.nodes[b].parent.expect("non-root has parent");
        }
        while a != b {
            a = self.nodes[a].parent.expect("non-root has parent");
            b = self.nodes[b].parent.expect("non-root has parent");
        }
        a
    }

    /// Node ids from `node` up to the root, inclusive.
    pub fn path_to_root(&self, node: usize) -> Vec<usize> {
        let mut path = vec![node];
        let mut cur = node;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path
    }

    /// JSON dump `{nodes:[{id,range,left,right,cut_edge_count}], permutation}`.
    pub fn to_json(&self) -> String {
        let export = TreeExport {
            d_th: self.d_th,
            phases: self.phases,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeExport {
                    id: n.id,
                    range: [n.index_range.start, n.index_range.end],
                    left: n.left,
                    right: n.right,
                    cut_edge_count: n.cut_edges.len(),
                })
                .collect(),
            permutation: self.bus_order.clone(),
        };
        serde_json::to_string_pretty(&export).expect("tree serializes")
    }

    /// Stable 64-bit fingerprint of the tree structure.
    pub fn structure_hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.to_json().as_bytes());
        for n in &self.nodes {
            for e in &n.cut_edges {
                h.update((e.row as u64).to_le_bytes());
                h.update((e.col as u64).to_le_bytes());
            }
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

struct Builder<'a> {
    adjacency: &'a [Vec<usize>],
    d_th: usize,
    nodes: Vec<TreeNode>,
    bus_order: Vec<usize>,
    pending_cuts: Vec<(usize, Vec<(usize, usize)>)>,
}

impl Builder<'_> {
    fn build(&mut self, buses: Vec<usize>, parent: Option<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let start = self.bus_order.len();
        self.nodes.push(TreeNode {
            id,
            parent,
            left: None,
            right: None,
            depth,
            bus_range: start..start,
            index_range: 0..0,
            cut_edges: Vec::new(),
        });
        if buses.len() <= self.d_th {
            self.bus_order.extend(&buses);
        } else {
            let bis = bipartition(&buses, self.adjacency);
            let l = self.build(bis.left, Some(id), depth + 1);
            let r = self.build(bis.right, Some(id), depth + 1);
            self.nodes[id].left = Some(l);
            self.nodes[id].right = Some(r);
            self.pending_cuts.push((id, bis.cut));
        }
        self.nodes[id].bus_range = start..self.bus_order.len();
        id
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for l in &mut adj {
            l.sort_unstable();
            l.dedup();
        }
        adj
    }

    #[test]
    fn balance_window_small_cases() {
        assert_eq!(balance_window(2), (1, 1));
        assert_eq!(balance_window(3), (2, 2));
        assert_eq!(balance_window(4), (1, 3));
        assert_eq!(balance_window(179), (46, 134));
    }

    #[test]
    fn two_nodes_split_one_each() {
        let adj = adjacency(2, &[(0, 1)]);
        let b = bipartition(&[0, 1], &adj);
        assert_eq!(b.left.len(), 1);
        assert_eq!(b.right.len(), 1);
        assert_eq!(b.cut.len(), 1);
    }

    #[test]
    fn disconnected_components_split_cleanly() {
        // Two triangles, no edges between them.
        let adj = adjacency(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]);
        let b = bipartition(&[0, 1, 2, 3, 4, 5], &adj);
        assert!(b.cut.is_empty());
        assert_eq!(b.left, vec![0, 1, 2]);
    }

    #[test]
    fn single_leaf_when_small() {
        let adj = adjacency(3, &[(0, 1), (1, 2)]);
        let t = PartitionTree::from_adjacency(&adj, 1, 3).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert!(t.node(t.root()).is_leaf());
        for bus in 0..3 {
            assert_eq!(t.locate_leaf(bus).unwrap(), t.root());
        }
        assert!(matches!(t.locate_leaf(7), Err(Error::UnknownBus(7))));
    }

    #[test]
    fn lca_of_self_is_self() {
        let adj = adjacency(8, &(0..7).map(|i| (i, i + 1)).collect::<Vec<_>>());
        let t = PartitionTree::from_adjacency(&adj, 1, 2).unwrap();
        for n in t.nodes() {
            assert_eq!(t.lca(n.id, n.id), n.id);
        }
    }

    #[test]
    fn three_phase_keeps_bus_phases_together() {
        let adj = adjacency(6, &(0..5).map(|i| (i, i + 1)).collect::<Vec<_>>());
        let t = PartitionTree::from_adjacency(&adj, 3, 2).unwrap();
        for leaf in t.leaves() {
            assert_eq!(leaf.dim(), 3 * leaf.n_buses());
            assert_eq!(leaf.index_range.start % 3, 0);
        }
        let root = t.node(t.root());
        assert_eq!(root.cut_edges.len(), 3);
    }
}
