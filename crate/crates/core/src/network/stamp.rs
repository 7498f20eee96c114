//! Companion-model stamping of the nodal conductance matrix and the
//! right-hand-side terms of `G v(t) = i_in(t) + i_his(t − Δt)`.

use std::collections::{BTreeMap, VecDeque};
use std::ops::Range;

use super::{NetworkModel, Terminal};
use crate::dense::Matrix;
use crate::sim::SimulationState;

/// Real symmetric sparse conductance matrix. Ground is the implicit
/// reference node and never appears as a row or column.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductanceMatrix {
    dim: usize,
    phases: usize,
    delta_t: f64,
    /// Full (both triangles) row storage, columns sorted.
    rows: Vec<BTreeMap<usize, f64>>,
    /// Companion conductance of every branch, in network order.
    branch_conductance: Vec<f64>,
    warnings: Vec<String>,
}

impl ConductanceMatrix {
    pub fn new(dim: usize, phases: usize, delta_t: f64) -> Self {
        Self {
            dim,
            phases,
            delta_t,
            rows: vec![BTreeMap::new(); dim],
            branch_conductance: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Builds a matrix from explicit symmetric triplets `(row, col, value)`
    /// with `row <= col`; mostly useful for tests.
    pub fn from_upper_triplets(dim: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut m = Self::new(dim, 1, 1.0);
        for &(r, c, v) in entries {
            assert!(r <= c, "expected upper-triangle triplets");
            m.add(r, c, v);
            if r != c {
                m.add(c, r, v);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    pub fn branch_conductance(&self) -> &[f64] {
        &self.branch_conductance
    }

    /// Assembly diagnostics, e.g. nodes without a conductive path to ground.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.rows[r].get(&c).copied().unwrap_or(0.0)
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.rows[r].iter().map(|(&c, &v)| (c, v))
    }

    /// Row entries with column in `cols`.
    pub fn row_range(&self, r: usize, cols: Range<usize>) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.rows[r].range(cols).map(|(&c, &v)| (c, v))
    }

    pub fn nonzeros(&self) -> usize {
        self.rows.iter().map(BTreeMap::len).sum()
    }

    fn add(&mut self, r: usize, c: usize, v: f64) {
        *self.rows[r].entry(c).or_insert(0.0) += v;
    }

    /// Stamps conductance `g` between two nodes; `None` is ground.
    pub fn stamp(&mut self, a: Option<usize>, b: Option<usize>, g: f64) {
        match (a, b) {
            (Some(a), Some(b)) => {
                self.add(a, a, g);
                self.add(b, b, g);
                self.add(a, b, -g);
                self.add(b, a, -g);
            }
            (Some(a), None) | (None, Some(a)) => self.add(a, a, g),
            (None, None) => {}
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.dim, self.dim);
        for (r, row) in self.rows.iter().enumerate() {
            for (&c, &v) in row {
                m[(r, c)] = v;
            }
        }
        m
    }

    /// Dense copy of the principal block on `range`.
    pub fn principal_block(&self, range: Range<usize>) -> Matrix {
        let off = range.start;
        let n = range.len();
        let mut m = Matrix::zeros(n, n);
        for r in range.clone() {
            for (c, v) in self.row_range(r, range.clone()) {
                m[(r - off, c - off)] = v;
            }
        }
        m
    }

    /// Symmetric permutation: entry `(i, j)` of the result is entry
    /// `(old_of_new[i], old_of_new[j])` of `self`.
    pub fn permuted(&self, old_of_new: &[usize]) -> Self {
        assert_eq!(old_of_new.len(), self.dim);
        let mut new_of_old = vec![usize::MAX; self.dim];
        for (new, &old) in old_of_new.iter().enumerate() {
            new_of_old[old] = new;
        }
        let rows = old_of_new
            .iter()
            .map(|&old| self.rows[old].iter().map(|(&c, &v)| (new_of_old[c], v)).collect())
            .collect();
        Self {
            rows,
            warnings: self.warnings.clone(),
            branch_conductance: self.branch_conductance.clone(),
            ..*self
        }
    }

    /// Every stored `(r, c)` equals the stored `(c, r)` bit-for-bit.
    pub fn is_exactly_symmetric(&self) -> bool {
        self.rows.iter().enumerate().all(|(r, row)| {
            row.iter()
                .all(|(&c, &v)| self.rows[c].get(&r).is_some_and(|w| w.to_bits() == v.to_bits()))
        })
    }

    /// Positions `(r, c)` (both triangles) whose values differ from `other`.
    pub fn changed_entries(&self, other: &ConductanceMatrix) -> Vec<(usize, usize)> {
        assert_eq!(self.dim, other.dim);
        let mut out = Vec::new();
        for r in 0..self.dim {
            let keys: std::collections::BTreeSet<usize> =
                self.rows[r].keys().chain(other.rows[r].keys()).copied().collect();
            for c in keys {
                if self.get(r, c).to_bits() != other.get(r, c).to_bits() {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// Nodes whose connected component (through off-diagonal couplings) has
    /// no positive row sum, i.e. no conductive path to ground.
    fn floating_nodes(&self) -> Vec<usize> {
        let mut seen = vec![false; self.dim];
        let mut floating = Vec::new();
        for start in 0..self.dim {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &w in self.rows[u].keys() {
                    if !seen[w] {
                        seen[w] = true;
                        comp.push(w);
                        queue.push_back(w);
                    }
                }
            }
            let grounded = comp.iter().any(|&u| {
                let row_sum: f64 = self.rows[u].values().sum();
                row_sum > 1e-14 * self.rows[u].get(&u).copied().unwrap_or(0.0).abs()
            });
            if !grounded {
                floating.extend(comp);
            }
        }
        floating.sort_unstable();
        floating
    }
}

/// Stamps `G` for the pre-fault network.
pub fn assemble_conductance(net: &NetworkModel, delta_t: f64) -> ConductanceMatrix {
    assemble_with_faults(net, delta_t, &[])
}

/// Stamps `G` with the faults flagged in `active` (indexed like
/// `net.faults`; missing entries count as inactive).
///
/// Order is fixed: bus shunts, branches, then active faults, so that two
/// assemblies of the same configuration are bit-identical.
pub fn assemble_with_faults(net: &NetworkModel, delta_t: f64, active: &[bool]) -> ConductanceMatrix {
    assert!(delta_t > 0.0, "delta_t must be positive");
    let phases = net.phases();
    let mut g = ConductanceMatrix::new(net.dim(), phases, delta_t);
    for bus in &net.buses {
        if bus.shunt_g > 0.0 {
            for p in 0..phases {
                g.stamp(Some(net.node_index(bus.id, p)), None, bus.shunt_g);
            }
        }
    }
    for br in &net.branches {
        let gc = br.element().companion_conductance(delta_t);
        g.branch_conductance.push(gc);
        for p in 0..phases {
            let b = br.to.bus().map(|b| net.node_index(b, p));
            g.stamp(Some(net.node_index(br.from, p)), b, gc);
        }
    }
    for (f, _) in net
        .faults
        .iter()
        .zip(active.iter())
        .filter(|(_, &on)| on)
    {
        let gf = 1.0 / f.fault_resistance;
        for p in 0..phases {
            let b = f.bus_b.bus().map(|b| net.node_index(b, p));
            g.stamp(Some(net.node_index(f.bus_a, p)), b, gf);
        }
    }
    let floating = g.floating_nodes();
    if !floating.is_empty() {
        g.warnings.push(format!(
            "{} node(s) have no conductive path to ground (first: {}); G is singular",
            floating.len(),
            floating[0]
        ));
    }
    g
}

/// Equivalent history source of each branch-phase, oriented `from → to` in
/// parallel with the companion conductance. Indexed `branch * phases + phase`.
pub(crate) fn history_terms(net: &NetworkModel, state: &SimulationState, delta_t: f64) -> Vec<f64> {
    let phases = net.phases();
    let mut out = Vec::with_capacity(net.branches.len() * phases);
    for (bi, br) in net.branches.iter().enumerate() {
        let el = br.element();
        let g = el.companion_conductance(delta_t);
        for p in 0..phases {
            let a = net.node_index(br.from, p);
            let vb = br.to.bus().map_or(0.0, |b| state.v[net.node_index(b, p)]);
            let v_ab = state.v[a] - vb;
            let i = state.branch_currents[bi * phases + p];
            out.push(match el {
                super::Element::Resistor { .. } => 0.0,
                super::Element::Inductor { .. } => i + g * v_ab,
                super::Element::Capacitor { .. } => -i - g * v_ab,
                super::Element::SeriesRl { r, l } => g * (v_ab + (2.0 * l / delta_t - r) * i),
            });
        }
    }
    out
}

/// The `i_his(t − Δt)` vector: each branch history source drawn out of its
/// `from` node and injected into its `to` node.
pub fn history_currents(net: &NetworkModel, state: &SimulationState, delta_t: f64) -> Vec<f64> {
    let terms = history_terms(net, state, delta_t);
    scatter_history(net, &terms)
}

pub(crate) fn scatter_history(net: &NetworkModel, terms: &[f64]) -> Vec<f64> {
    let phases = net.phases();
    let mut out = vec![0.0; net.dim()];
    for (bi, br) in net.branches.iter().enumerate() {
        for p in 0..phases {
            let ih = terms[bi * phases + p];
            if ih == 0.0 {
                continue;
            }
            out[net.node_index(br.from, p)] -= ih;
            if let Terminal::Bus(b) = br.to {
                out[net.node_index(b, p)] += ih;
            }
        }
    }
    out
}

/// The `i_in(t)` vector: all source waveforms evaluated at `t`.
pub fn injection_vector(net: &NetworkModel, t: f64) -> Vec<f64> {
    let mut out = vec![0.0; net.dim()];
    for src in &net.sources {
        out[net.node_index(src.bus, src.phase)] += src.value_at(t);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Branch, NetworkModel, SourceWaveform};

    #[test]
    fn two_bus_hand_stamp() {
        let mut net = NetworkModel::with_buses("two", 2, 1.0);
        net.branches.push(Branch::resistor(0, 1, 1.0));
        let g = assemble_conductance(&net, 20e-6);
        let d = g.to_dense();
        assert_eq!(d, Matrix::from_rows(&[vec![2.0, -1.0], vec![-1.0, 2.0]]));
        assert!(g.warnings().is_empty());
    }

    #[test]
    fn capacitor_companion() {
        let mut net = NetworkModel::with_buses("c", 1, 0.0);
        net.branches.push(Branch::capacitor(0, Terminal::Ground, 100e-6));
        let g = assemble_conductance(&net, 20e-6);
        assert!((g.get(0, 0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn inductor_tie_off_diagonal() {
        let mut net = NetworkModel::with_buses("l", 2, 1.0);
        net.branches.push(Branch::inductor(0, 1, 1e-3));
        let g = assemble_conductance(&net, 20e-6);
        assert!((g.get(0, 1) + 0.01).abs() < 1e-15);
        assert_eq!(g.get(0, 1).to_bits(), g.get(1, 0).to_bits());
    }

    #[test]
    fn series_rl_companion() {
        let mut net = NetworkModel::with_buses("rl", 2, 1.0);
        net.branches.push(Branch::series_rl(0, 1, 2.0, 1e-3));
        let g = assemble_conductance(&net, 20e-6);
        assert!((g.get(0, 1) + 1.0 / (2.0 + 100.0)).abs() < 1e-15);
    }

    #[test]
    fn floating_node_is_flagged() {
        let mut net = NetworkModel::with_buses("f", 2, 0.0);
        net.branches.push(Branch::resistor(0, 1, 1.0));
        let g = assemble_conductance(&net, 20e-6);
        assert_eq!(g.warnings().len(), 1);
    }

    #[test]
    fn row_sums_vanish_without_ground_branches() {
        let mut net = NetworkModel::with_buses("r", 3, 0.0);
        net.buses[2].shunt_g = 0.5;
        net.branches.push(Branch::resistor(0, 1, 2.0));
        net.branches.push(Branch::inductor(1, 2, 1e-3));
        net.branches.push(Branch::capacitor(0, 2, 1e-6));
        let g = assemble_conductance(&net, 20e-6);
        for r in 0..2 {
            let sum: f64 = g.row(r).map(|(_, v)| v).sum();
            assert!(sum.abs() < 1e-12, "row {r} sums to {sum}");
        }
        let sum2: f64 = g.row(2).map(|(_, v)| v).sum();
        assert!((sum2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn three_phase_stamps_independent_copies() {
        let mut net = NetworkModel::with_buses("3ph", 2, 1.0);
        for b in &mut net.buses {
            b.phases = 3;
        }
        net.branches.push(Branch::resistor(0, 1, 0.5));
        let g = assemble_conductance(&net, 20e-6);
        assert_eq!(g.dim(), 6);
        for p in 0..3 {
            assert_eq!(g.get(p, 3 + p), -2.0);
            assert_eq!(g.get(p, p), 3.0);
        }
        assert_eq!(g.get(0, 4), 0.0);
    }

    #[test]
    fn permutation_preserves_entries() {
        let g = ConductanceMatrix::from_upper_triplets(3, &[(0, 0, 3.0), (0, 2, -1.0), (1, 1, 2.0), (2, 2, 4.0)]);
        let p = g.permuted(&[2, 0, 1]);
        assert_eq!(p.get(0, 0), 4.0);
        assert_eq!(p.get(0, 1), -1.0);
        assert_eq!(p.get(2, 2), 2.0);
        assert!(p.is_exactly_symmetric());
    }

    #[test]
    fn resistive_network_has_no_history() {
        let mut net = NetworkModel::with_buses("r", 2, 1.0);
        net.branches.push(Branch::resistor(0, 1, 1.0));
        let state = SimulationState {
            t: 0.0,
            step: 0,
            v: vec![1.0, -2.0],
            branch_currents: vec![3.0],
            active_faults: vec![],
        };
        assert_eq!(history_currents(&net, &state, 1e-5), vec![0.0, 0.0]);
    }

    #[test]
    fn inductor_to_ground_history() {
        let mut net = NetworkModel::with_buses("l", 1, 1.0);
        net.branches.push(Branch::inductor(0, Terminal::Ground, 1e-3));
        // 1 A flowing from ground into the bus: the source keeps pushing it in.
        let mut state = SimulationState {
            t: 0.0,
            step: 0,
            v: vec![0.0],
            branch_currents: vec![-1.0],
            active_faults: vec![],
        };
        assert_eq!(history_currents(&net, &state, 20e-6), vec![1.0]);
        // Reversed orientation: 1 A leaving the bus through the inductor.
        state.branch_currents[0] = 1.0;
        assert_eq!(history_currents(&net, &state, 20e-6), vec![-1.0]);
    }

    #[test]
    fn injection_vector_places_sources() {
        let mut net = NetworkModel::with_buses("s", 3, 1.0);
        assert_eq!(injection_vector(&net, 0.3), vec![0.0; 3]);
        net.sources.push(SourceWaveform {
            bus: 2,
            phase: 0,
            magnitude: 1.0,
            frequency: 60.0,
            phase_angle: 0.0,
        });
        assert_eq!(injection_vector(&net, 0.0)[2], 0.0);
        assert!((injection_vector(&net, 1.0 / 240.0)[2] - 1.0).abs() < 1e-15);
    }
}
