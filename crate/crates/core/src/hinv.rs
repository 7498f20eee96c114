//! Tree-aligned approximate inverse of a conductance matrix.
//!
//! For an internal node with children `l`, `r` and off-diagonal block
//! `H = h1 h2ᵀ` of `G`, the node's operator is
//!
//! ```text
//! [ Op(l)      -u vᵀ ]      u = Op(l) h1,  v = Op(r) h2
//! [ -v uᵀ      Op(r) ]
//! ```
//!
//! Leaves hold dense exact inverses of their principal blocks. Each cut
//! edge `(a, b)` with conductance `g` contributes a unit column at `a` to
//! `h1` and `-g` times a unit column at `b` to `h2`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::dense::{invert_symmetric, LuFactors, Matrix};
use crate::error::{Error, Result};
use crate::flops::{FlopCategory, FlopCounter, FlopSnapshot};
use crate::network::ConductanceMatrix;
use crate::partition::PartitionTree;

/// Largest dimension [`HInverse::materialize`] will assemble.
pub const MATERIALIZE_LIMIT: usize = 5000;

/// One merged coupling between the children of an internal node, in
/// tree-ordered matrix indices. `conductance` is `-G[row][col]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingEdge {
    pub row: usize,
    pub col: usize,
    pub conductance: f64,
}

/// Rank-`k` off-diagonal block `M = -u vᵀ` of an internal node.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingFactor {
    pub rank: usize,
    /// `n_left × k`.
    pub u: Matrix,
    /// `n_right × k`.
    pub v: Matrix,
}

impl CouplingFactor {
    pub fn empty(n_left: usize, n_right: usize) -> Self {
        Self {
            rank: 0,
            u: Matrix::zeros(n_left, 0),
            v: Matrix::zeros(n_right, 0),
        }
    }

    /// Dense `M = -u vᵀ`.
    pub fn block(&self) -> Matrix {
        let (m, n) = (self.u.nrows(), self.v.nrows());
        Matrix::from_fn(m, n, |i, j| -dot(self.u.row(i), self.v.row(j)))
    }
}

/// A linear operator that can be applied to vectors and queried for single
/// columns. Every call returns its FLOP count.
pub trait InverseOperator {
    fn dim(&self) -> usize;
    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> u64;
    fn column_into(&self, j: usize, out: &mut [f64]) -> u64;
}

impl InverseOperator for Matrix {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> u64 {
        self.matvec_into(x, y)
    }

    fn column_into(&self, j: usize, out: &mut [f64]) -> u64 {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self[(i, j)];
        }
        0
    }
}

/// Coupling edges of `node`: nonzero entries of `G` between its left and
/// right children. Parallel branches are already summed in `G`.
pub fn coupling_edges(g: &ConductanceMatrix, tree: &PartitionTree, node: usize) -> Vec<CouplingEdge> {
    let nd = tree.node(node);
    let (Some(l), Some(r)) = (nd.left, nd.right) else {
        return Vec::new();
    };
    let left = tree.node(l).index_range.clone();
    let right = tree.node(r).index_range.clone();
    let mut edges = Vec::new();
    for row in left {
        for (col, val) in g.row_range(row, right.clone()) {
            if val != 0.0 {
                edges.push(CouplingEdge {
                    row,
                    col,
                    conductance: -val,
                });
            }
        }
    }
    edges
}

/// Splits the off-diagonal block of `node` as `H = h1 h2ᵀ`.
pub fn decompose_coupling(g: &ConductanceMatrix, tree: &PartitionTree, node: usize) -> (Matrix, Matrix) {
    let nd = tree.node(node);
    let (Some(l), Some(r)) = (nd.left, nd.right) else {
        panic!("decompose_coupling needs an internal node");
    };
    let edges = coupling_edges(g, tree, node);
    decompose_edges(
        &edges,
        tree.node(l).index_range.start,
        tree.node(l).dim(),
        tree.node(r).index_range.start,
        tree.node(r).dim(),
    )
}

fn decompose_edges(
    edges: &[CouplingEdge],
    left_start: usize,
    n_left: usize,
    right_start: usize,
    n_right: usize,
) -> (Matrix, Matrix) {
    let k = edges.len();
    let mut h1 = Matrix::zeros(n_left, k);
    let mut h2 = Matrix::zeros(n_right, k);
    for (e, edge) in edges.iter().enumerate() {
        h1[(edge.row - left_start, e)] = 1.0;
        h2[(edge.col - right_start, e)] = -edge.conductance;
    }
    (h1, h2)
}

/// `u = left · h1`, `v = right · h2`. Columns with a single nonzero are
/// served by column extraction instead of a full apply.
pub fn compute_coupling_factor(
    left: &dyn InverseOperator,
    right: &dyn InverseOperator,
    h1: &Matrix,
    h2: &Matrix,
) -> (CouplingFactor, u64) {
    assert_eq!(h1.ncols(), h2.ncols(), "h1 and h2 must have equal rank");
    let (u, fu) = apply_columns(left, h1);
    let (v, fv) = apply_columns(right, h2);
    (
        CouplingFactor {
            rank: h1.ncols(),
            u,
            v,
        },
        fu + fv,
    )
}

fn apply_columns(op: &dyn InverseOperator, h: &Matrix) -> (Matrix, u64) {
    let n = h.nrows();
    let mut out = Matrix::zeros(n, h.ncols());
    let mut col = vec![0.0; n];
    let mut flops = 0;
    for e in 0..h.ncols() {
        let x = h.column(e);
        let nz: Vec<usize> = (0..n).filter(|&i| x[i] != 0.0).collect();
        if nz.len() == 1 {
            flops += op.column_into(nz[0], &mut col);
            let s = x[nz[0]];
            if s != 1.0 {
                col.iter_mut().for_each(|c| *c *= s);
                flops += n as u64;
            }
        } else {
            flops += op.apply_into(&x, &mut col);
        }
        out.set_column(e, &col);
    }
    (out, flops)
}

#[derive(Debug, Clone, PartialEq)]
enum NodeData {
    Leaf {
        /// Principal block of `G` the inverse was computed from.
        g: Matrix,
        inv: Matrix,
    },
    Internal {
        edges: Vec<CouplingEdge>,
        factor: CouplingFactor,
    },
}

/// How a changed leaf's inverse is refreshed during [`HInverse::modify`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LeafUpdate {
    /// Woodbury update restricted to the changed rows/columns.
    #[default]
    LowRank,
    /// Fresh dense inversion of the new block.
    Reinvert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModifyOptions {
    /// Recompute every coupling factor under the update root instead of
    /// only the factors whose inputs changed.
    pub faithful: bool,
    pub leaf_update: LeafUpdate,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ModifyReport {
    /// Lowest common ancestor of the touched leaves, `None` for a no-op.
    pub lca: Option<usize>,
    pub leaves_updated: Vec<usize>,
    /// Node whose coupling edge list changed, if any.
    pub edge_node: Option<usize>,
    /// Number of `u` or `v` factor recomputations.
    pub factors_recomputed: usize,
    pub flops: u64,
    /// Part of `flops` spent on ancestors strictly above `lca`.
    pub flops_above_lca: u64,
}

#[derive(Debug, Clone)]
pub struct HInverse {
    tree: Arc<PartitionTree>,
    data: Vec<NodeData>,
    counter: FlopCounter,
}

/// Builds the hierarchical inverse of `g` (tree order) bottom-up.
pub fn hierarchical_ginv(g: &ConductanceMatrix, tree: Arc<PartitionTree>) -> Result<HInverse> {
    HInverse::build(g, tree)
}

impl HInverse {
    pub fn build(g: &ConductanceMatrix, tree: Arc<PartitionTree>) -> Result<Self> {
        if g.dim() != tree.dim() {
            return Err(Error::DimensionMismatch {
                expected: tree.dim(),
                found: g.dim(),
            });
        }
        let mut data: Vec<NodeData> = tree
            .nodes()
            .iter()
            .map(|_| NodeData::Internal {
                edges: Vec::new(),
                factor: CouplingFactor::empty(0, 0),
            })
            .collect();
        let mut flops = 0;
        // Pre-order ids: every child has a larger id than its parent.
        for id in (0..tree.nodes().len()).rev() {
            let node = tree.node(id);
            if node.is_leaf() {
                let block = g.principal_block(node.index_range.clone());
                let (inv, f) = invert_leaf(&block, id)?;
                flops += f;
                data[id] = NodeData::Leaf { g: block, inv };
            } else {
                let edges = coupling_edges(g, &tree, id);
                let (factor, f) = node_factor(&tree, &data, id, &edges, None, true, true);
                flops += f;
                data[id] = NodeData::Internal { edges, factor };
            }
        }
        let counter = FlopCounter::default();
        counter.add(FlopCategory::Construction, flops);
        Ok(Self { tree, data, counter })
    }

    pub fn tree(&self) -> &Arc<PartitionTree> {
        &self.tree
    }

    pub fn dim(&self) -> usize {
        self.tree.dim()
    }

    pub fn flops(&self) -> FlopSnapshot {
        self.counter.snapshot()
    }

    /// Dense inverse stored at a leaf.
    pub fn leaf_inverse(&self, node: usize) -> Option<&Matrix> {
        match &self.data[node] {
            NodeData::Leaf { inv, .. } => Some(inv),
            NodeData::Internal { .. } => None,
        }
    }

    /// Coupling edges and factor of an internal node.
    pub fn coupling(&self, node: usize) -> Option<(&[CouplingEdge], &CouplingFactor)> {
        match &self.data[node] {
            NodeData::Internal { edges, factor } => Some((edges, factor)),
            NodeData::Leaf { .. } => None,
        }
    }

    /// `y = G̃⁻¹ x` in tree order.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.apply_with_flops(x).map(|(y, _)| y)
    }

    /// Like [`HInverse::apply`], also returning this call's FLOP count.
    pub fn apply_with_flops(&self, x: &[f64]) -> Result<(Vec<f64>, u64)> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let mut y = vec![0.0; x.len()];
        let f = apply_node(&self.tree, &self.data, self.tree.root(), x, &mut y);
        self.counter.add(FlopCategory::Apply, f);
        Ok((y, f))
    }

    /// Explicit dense `G̃⁻¹` (tree order); exactly symmetric.
    pub fn materialize(&self) -> Result<Matrix> {
        let n = self.dim();
        if n > MATERIALIZE_LIMIT {
            return Err(Error::TooLarge {
                n,
                limit: MATERIALIZE_LIMIT,
            });
        }
        let mut out = Matrix::zeros(n, n);
        for (id, nd) in self.data.iter().enumerate() {
            let node = self.tree.node(id);
            match nd {
                NodeData::Leaf { inv, .. } => {
                    let s = node.index_range.start;
                    for i in 0..inv.nrows() {
                        for j in 0..inv.ncols() {
                            out[(s + i, s + j)] = inv[(i, j)];
                        }
                    }
                }
                NodeData::Internal { factor, .. } => {
                    let (l, r) = children(&self.tree, id);
                    let ls = self.tree.node(l).index_range.start;
                    let rs = self.tree.node(r).index_range.start;
                    let m = factor.block();
                    for i in 0..m.nrows() {
                        for j in 0..m.ncols() {
                            out[(ls + i, rs + j)] = m[(i, j)];
                            out[(rs + j, ls + i)] = m[(i, j)];
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Bit-level equality of all stored blocks and factors.
    pub fn bitwise_eq(&self, other: &HInverse) -> bool {
        if self.data.len() != other.data.len() {
            return false;
        }
        let bits = |m: &Matrix, o: &Matrix| {
            m.nrows() == o.nrows()
                && m.ncols() == o.ncols()
                && m.as_slice()
                    .iter()
                    .zip(o.as_slice())
                    .all(|(a, b)| a.to_bits() == b.to_bits())
        };
        self.data.iter().zip(&other.data).all(|(a, b)| match (a, b) {
            (NodeData::Leaf { g: ga, inv: ia }, NodeData::Leaf { g: gb, inv: ib }) => {
                bits(ga, gb) && bits(ia, ib)
            }
            (
                NodeData::Internal {
                    edges: ea,
                    factor: fa,
                },
                NodeData::Internal {
                    edges: eb,
                    factor: fb,
                },
            ) => {
                ea.len() == eb.len()
                    && ea.iter().zip(eb).all(|(x, y)| {
                        x.row == y.row
                            && x.col == y.col
                            && x.conductance.to_bits() == y.conductance.to_bits()
                    })
                    && fa.rank == fb.rank
                    && bits(&fa.u, &fb.u)
                    && bits(&fa.v, &fb.v)
            }
            _ => false,
        })
    }

    /// Updates the inverse for `g_new`, which differs from the current
    /// matrix exactly at `changed` (tree-order positions, either triangle).
    ///
    /// Changed leaves are refreshed, the coupling edges of the node that owns
    /// a changed off-diagonal entry are re-extracted, and every factor whose
    /// child operator changed is recomputed up to the root. The result
    /// equals a rebuild on the same tree (bit-for-bit with
    /// [`LeafUpdate::Reinvert`]).
    pub fn modify(
        &mut self,
        g_new: &ConductanceMatrix,
        changed: &[(usize, usize)],
        opts: ModifyOptions,
    ) -> Result<ModifyReport> {
        if g_new.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: g_new.dim(),
            });
        }
        let tree = Arc::clone(&self.tree);
        let mut leaf_idx: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        let mut edge_nodes = BTreeSet::new();
        let mut touched = BTreeSet::new();
        for &(r, c) in changed {
            let (lr, lc) = (tree.leaf_of_index(r), tree.leaf_of_index(c));
            touched.insert(lr);
            touched.insert(lc);
            if lr == lc {
                let s = tree.node(lr).index_range.start;
                let set = leaf_idx.entry(lr).or_default();
                set.insert(r - s);
                set.insert(c - s);
            } else {
                edge_nodes.insert(tree.lca(lr, lc));
            }
        }
        if touched.len() > 2 {
            return Err(Error::ModifySpan(touched.len()));
        }
        let mut report = ModifyReport::default();
        let Some(&first) = touched.first() else {
            return Ok(report);
        };
        let lca = touched.iter().fold(first, |acc, &l| tree.lca(acc, l));
        report.lca = Some(lca);
        report.edge_node = edge_nodes.first().copied();

        let mut flops = 0;
        for (&leaf, idx) in &leaf_idx {
            let range = tree.node(leaf).index_range.clone();
            let new_block = g_new.principal_block(range);
            let NodeData::Leaf { g, inv } = &mut self.data[leaf] else {
                unreachable!("leaf_of_index returns leaves");
            };
            let idx: Vec<usize> = idx.iter().copied().collect();
            let use_low_rank =
                opts.leaf_update == LeafUpdate::LowRank && 3 * idx.len() <= new_block.nrows();
            if use_low_rank {
                flops += woodbury_update(inv, g, &new_block, &idx, leaf)?;
            } else {
                let (fresh, f) = invert_leaf(&new_block, leaf)?;
                *inv = fresh;
                flops += f;
            }
            *g = new_block;
            report.leaves_updated.push(leaf);
        }
        for &node in &edge_nodes {
            let new_edges = coupling_edges(g_new, &tree, node);
            if let NodeData::Internal { edges, .. } = &mut self.data[node] {
                *edges = new_edges;
            }
        }

        let n_nodes = tree.nodes().len();
        let mut op_changed = vec![false; n_nodes];
        let mut redo = vec![(false, false); n_nodes];
        let under_lca = |id: usize| {
            let (a, b) = (&tree.node(id).index_range, &tree.node(lca).index_range);
            a.start >= b.start && a.end <= b.end
        };
        let above_lca: BTreeSet<usize> = tree.path_to_root(lca).into_iter().collect();
        for id in (0..n_nodes).rev() {
            let node = tree.node(id);
            match (node.left, node.right) {
                (Some(l), Some(r)) => {
                    let own = edge_nodes.contains(&id);
                    let mut ru = own || op_changed[l];
                    let mut rv = own || op_changed[r];
                    if opts.faithful && (under_lca(id) || above_lca.contains(&id)) {
                        ru = true;
                        rv = true;
                    }
                    redo[id] = (ru, rv);
                    op_changed[id] = own || op_changed[l] || op_changed[r];
                }
                _ => op_changed[id] = leaf_idx.contains_key(&id),
            }
        }
        for id in (0..n_nodes).rev() {
            let (ru, rv) = redo[id];
            if !(ru || rv) {
                continue;
            }
            let NodeData::Internal { edges, factor } = &self.data[id] else {
                continue;
            };
            if edges.is_empty() && factor.rank == 0 {
                continue;
            }
            let (new_factor, f) = node_factor(&tree, &self.data, id, edges, Some(factor), ru, rv);
            flops += f;
            if !under_lca(id) {
                report.flops_above_lca += f;
            }
            report.factors_recomputed += usize::from(ru) + usize::from(rv);
            if let NodeData::Internal { factor, .. } = &mut self.data[id] {
                *factor = new_factor;
            }
        }
        self.counter.add(FlopCategory::Modify, flops);
        report.flops = flops;
        Ok(report)
    }

    /// Little-endian binary dump: magic, tree hash, then every node's data.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.tree.structure_hash().to_le_bytes());
        put_u64(&mut out, self.data.len() as u64);
        for nd in &self.data {
            match nd {
                NodeData::Leaf { g, inv } => {
                    out.push(0);
                    put_matrix(&mut out, g);
                    put_matrix(&mut out, inv);
                }
                NodeData::Internal { edges, factor } => {
                    out.push(1);
                    put_u64(&mut out, edges.len() as u64);
                    for e in edges {
                        put_u64(&mut out, e.row as u64);
                        put_u64(&mut out, e.col as u64);
                        out.extend_from_slice(&e.conductance.to_le_bytes());
                    }
                    put_u64(&mut out, factor.rank as u64);
                    put_matrix(&mut out, &factor.u);
                    put_matrix(&mut out, &factor.v);
                }
            }
        }
        out
    }

    /// Inverse of [`HInverse::to_bytes`]; the dump must belong to `tree`.
    pub fn from_bytes(bytes: &[u8], tree: Arc<PartitionTree>) -> Result<Self> {
        let mut rd = Reader { bytes, pos: 0 };
        if rd.take(MAGIC.len())? != MAGIC {
            return Err(Error::Config("not an HInverse dump".into()));
        }
        let hash = rd.u64()?;
        if hash != tree.structure_hash() {
            return Err(Error::Config("HInverse dump was built for a different tree".into()));
        }
        let n = rd.u64()? as usize;
        if n != tree.nodes().len() {
            return Err(Error::Config("node count mismatch in HInverse dump".into()));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let tag = rd.take(1)?[0];
            data.push(match tag {
                0 => NodeData::Leaf {
                    g: rd.matrix()?,
                    inv: rd.matrix()?,
                },
                1 => {
                    let k = rd.u64()? as usize;
                    let mut edges = Vec::with_capacity(k);
                    for _ in 0..k {
                        edges.push(CouplingEdge {
                            row: rd.u64()? as usize,
                            col: rd.u64()? as usize,
                            conductance: rd.f64()?,
                        });
                    }
                    let rank = rd.u64()? as usize;
                    NodeData::Internal {
                        edges,
                        factor: CouplingFactor {
                            rank,
                            u: rd.matrix()?,
                            v: rd.matrix()?,
                        },
                    }
                }
                t => return Err(Error::Config(format!("bad node tag {t} in HInverse dump"))),
            });
        }
        Ok(Self {
            tree,
            data,
            counter: FlopCounter::default(),
        })
    }
}

const MAGIC: &[u8; 8] = b"HINVDMP1";

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_matrix(out: &mut Vec<u8>, m: &Matrix) {
    put_u64(out, m.nrows() as u64);
    put_u64(out, m.ncols() as u64);
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Config("truncated HInverse dump".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let r = self.u64()? as usize;
        let c = self.u64()? as usize;
        let mut m = Matrix::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                m[(i, j)] = self.f64()?;
            }
        }
        Ok(m)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn children(tree: &PartitionTree, id: usize) -> (usize, usize) {
    let n = tree.node(id);
    (n.left.expect("internal node"), n.right.expect("internal node"))
}

fn invert_leaf(block: &Matrix, leaf: usize) -> Result<(Matrix, u64)> {
    match invert_symmetric(block) {
        Ok((inv, _, f)) => Ok((inv, f)),
        Err(Error::Singular { rcond }) => Err(Error::SingularLeaf { leaf, rcond }),
        Err(e) => Err(e),
    }
}

/// Recomputes the requested sides of `id`'s factor from its children's
/// current operators; the other side is copied from `old`.
fn node_factor(
    tree: &PartitionTree,
    data: &[NodeData],
    id: usize,
    edges: &[CouplingEdge],
    old: Option<&CouplingFactor>,
    redo_u: bool,
    redo_v: bool,
) -> (CouplingFactor, u64) {
    let (l, r) = children(tree, id);
    let (ln, rn) = (tree.node(l), tree.node(r));
    let k = edges.len();
    let mut flops = 0;
    let mut col = Vec::new();

    let u = match old {
        Some(f) if !redo_u => f.u.clone(),
        _ => {
            let mut u = Matrix::zeros(ln.dim(), k);
            col.resize(ln.dim(), 0.0);
            for (e, edge) in edges.iter().enumerate() {
                flops += column_node(tree, data, l, edge.row - ln.index_range.start, &mut col);
                u.set_column(e, &col);
            }
            u
        }
    };
    let v = match old {
        Some(f) if !redo_v => f.v.clone(),
        _ => {
            let mut v = Matrix::zeros(rn.dim(), k);
            col.resize(rn.dim(), 0.0);
            for (e, edge) in edges.iter().enumerate() {
                flops += column_node(tree, data, r, edge.col - rn.index_range.start, &mut col);
                let s = -edge.conductance;
                col.iter_mut().for_each(|c| *c *= s);
                flops += rn.dim() as u64;
                v.set_column(e, &col);
            }
            v
        }
    };
    (CouplingFactor { rank: k, u, v }, flops)
}

/// Column `j` (local) of node `id`'s operator.
fn column_node(tree: &PartitionTree, data: &[NodeData], id: usize, j: usize, out: &mut [f64]) -> u64 {
    match &data[id] {
        NodeData::Leaf { inv, .. } => {
            // Symmetric block: row j equals column j.
            out.copy_from_slice(inv.row(j));
            0
        }
        NodeData::Internal { factor, .. } => {
            let (l, r) = children(tree, id);
            let nl = tree.node(l).dim();
            let k = factor.rank;
            let (top, bottom) = out.split_at_mut(nl);
            if j < nl {
                let f = column_node(tree, data, l, j, top);
                fill_cross(bottom, &factor.v, factor.u.row(j));
                f + cross_flops(bottom.len(), k)
            } else {
                let f = column_node(tree, data, r, j - nl, bottom);
                fill_cross(top, &factor.u, factor.v.row(j - nl));
                f + cross_flops(top.len(), k)
            }
        }
    }
}

/// `out = -w · c` for `w` of shape `out.len() × k`.
fn fill_cross(out: &mut [f64], w: &Matrix, c: &[f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = -dot(w.row(i), c);
    }
}

fn cross_flops(n: usize, k: usize) -> u64 {
    if k == 0 {
        0
    } else {
        (n * (2 * k - 1)) as u64
    }
}

fn apply_node(tree: &PartitionTree, data: &[NodeData], id: usize, x: &[f64], y: &mut [f64]) -> u64 {
    match &data[id] {
        NodeData::Leaf { inv, .. } => inv.matvec_into(x, y),
        NodeData::Internal { factor, .. } => {
            let (l, r) = children(tree, id);
            let nl = tree.node(l).dim();
            let (xl, xr) = x.split_at(nl);
            let (yl, yr) = y.split_at_mut(nl);
            let mut f = apply_node(tree, data, l, xl, yl) + apply_node(tree, data, r, xr, yr);
            let k = factor.rank;
            if k == 0 {
                return f;
            }
            let t: Vec<f64> = (0..k)
                .map(|e| (0..xr.len()).map(|i| factor.v[(i, e)] * xr[i]).sum())
                .collect();
            let s: Vec<f64> = (0..k)
                .map(|e| (0..xl.len()).map(|i| factor.u[(i, e)] * xl[i]).sum())
                .collect();
            for (i, yi) in yl.iter_mut().enumerate() {
                *yi -= dot(factor.u.row(i), &t);
            }
            for (i, yi) in yr.iter_mut().enumerate() {
                *yi -= dot(factor.v.row(i), &s);
            }
            let (nl, nr, k) = (xl.len() as u64, xr.len() as u64, k as u64);
            f += k * (2 * nr - 1) + k * (2 * nl - 1) + 2 * nl * k + 2 * nr * k;
            f
        }
    }
}

/// In-place Woodbury refresh of a symmetric leaf inverse `inv = old⁻¹` to
/// `new⁻¹`, where `new − old` is supported on `idx × idx`. Only the upper
/// triangle is computed; the lower is mirrored.
fn woodbury_update(inv: &mut Matrix, old: &Matrix, new: &Matrix, idx: &[usize], leaf: usize) -> Result<u64> {
    let n = inv.nrows();
    let s = idx.len();
    let d = Matrix::from_fn(s, s, |a, b| new[(idx[a], idx[b])] - old[(idx[a], idx[b])]);
    let b_ss = Matrix::from_fn(s, s, |a, b| inv[(idx[a], idx[b])]);
    let mut flops = (s * s) as u64; // forming d
    // T = I + D B_SS
    let mut t = d.matmul(&b_ss);
    flops += (s * s * (2 * s - 1)) as u64;
    for a in 0..s {
        t[(a, a)] += 1.0;
    }
    flops += s as u64;
    let (lu, f) = match LuFactors::factor(&t) {
        Ok(x) => x,
        Err(Error::Singular { rcond }) => return Err(Error::SingularLeaf { leaf, rcond }),
        Err(e) => return Err(e),
    };
    flops += f;
    let mut k = Matrix::zeros(s, s);
    let mut col = vec![0.0; s];
    for b in 0..s {
        flops += lu.solve_into(&d.column(b), &mut col);
        k.set_column(b, &col);
    }
    flops += k.symmetrize();
    // W = B[:, S] K
    let c = Matrix::from_fn(n, s, |i, a| inv[(i, idx[a])]);
    let w = c.matmul(&k);
    flops += (n * s * (2 * s - 1)) as u64;
    for i in 0..n {
        for j in i..n {
            let delta = dot(w.row(i), c.row(j));
            let v = inv[(i, j)] - delta;
            inv[(i, j)] = v;
            inv[(j, i)] = v;
        }
    }
    flops += (n * (n + 1) / 2 * 2 * s) as u64;
    Ok(flops)
}
