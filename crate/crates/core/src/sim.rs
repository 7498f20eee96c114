//! Fixed-step EMT loop: stamp `G` once, solve `G v = i_in + i_his` every
//! step, and patch the inverse in place when a fault switches.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flops::FlopSnapshot;
use crate::hinv::{HInverse, LeafUpdate, ModifyOptions};
use crate::network::stamp::{history_terms, scatter_history};
use crate::network::{
    assemble_with_faults, injection_vector, ConductanceMatrix, NetworkModel, Terminal,
    DEFAULT_DELTA_T, DEFAULT_T_END,
};
use crate::partition::{build_partition_tree, PartitionTree};
use crate::reference::{voltage_error, DenseFactorization};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Hierarchical,
    Reference,
    Both,
}

impl SolverKind {
    fn uses_hierarchical(self) -> bool {
        matches!(self, Self::Hierarchical | Self::Both)
    }

    fn uses_reference(self) -> bool {
        matches!(self, Self::Reference | Self::Both)
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hierarchical" => Ok(Self::Hierarchical),
            "reference" => Ok(Self::Reference),
            "both" => Ok(Self::Both),
            other => Err(Error::Config(format!(
                "unknown solver '{other}' (expected hierarchical, reference or both)"
            ))),
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Hierarchical => "hierarchical",
            Self::Reference => "reference",
            Self::Both => "both",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub delta_t: f64,
    pub t_end: f64,
    pub d_th: usize,
    pub solver: SolverKind,
    /// Record every `decimation`-th step.
    pub decimation: usize,
    pub faithful_update: bool,
    /// Re-invert changed leaves instead of the low-rank update.
    pub leaf_reinvert: bool,
    /// Matrix indices (original order) to record; `None` records all.
    pub record_nodes: Option<Vec<usize>>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            delta_t: DEFAULT_DELTA_T,
            t_end: DEFAULT_T_END,
            d_th: 74,
            solver: SolverKind::Hierarchical,
            decimation: 1,
            faithful_update: false,
            leaf_reinvert: false,
            record_nodes: None,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_t > 0.0 && self.delta_t.is_finite()) {
            return Err(Error::Config(format!("delta_t must be > 0, got {}", self.delta_t)));
        }
        if self.t_end.is_nan() || self.t_end < self.delta_t {
            return Err(Error::Config(format!(
                "t_end ({}) must be >= delta_t ({})",
                self.t_end, self.delta_t
            )));
        }
        if self.d_th == 0 {
            return Err(Error::Config("d_th must be >= 1".into()));
        }
        if self.decimation == 0 {
            return Err(Error::Config("decimation must be >= 1".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.delta_t).round() as usize
    }

    fn modify_options(&self) -> ModifyOptions {
        ModifyOptions {
            faithful: self.faithful_update,
            leaf_update: if self.leaf_reinvert {
                LeafUpdate::Reinvert
            } else {
                LeafUpdate::LowRank
            },
        }
    }
}

/// Step index closest to time `t`.
pub fn snap_to_step(t: f64, delta_t: f64) -> usize {
    (t / delta_t).round().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationState {
    pub t: f64,
    pub step: usize,
    /// Nodal voltages, original matrix order.
    pub v: Vec<f64>,
    /// Branch currents `from → to`, indexed `branch * phases + phase`.
    pub branch_currents: Vec<f64>,
    pub active_faults: Vec<bool>,
}

impl SimulationState {
    /// Zero voltages and currents, no fault active.
    pub fn cold(net: &NetworkModel) -> Self {
        Self {
            t: 0.0,
            step: 0,
            v: vec![0.0; net.dim()],
            branch_currents: vec![0.0; net.branches.len() * net.phases()],
            active_faults: vec![false; net.faults.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultTransition {
    pub fault: usize,
    pub on: bool,
    pub step: usize,
    pub t: f64,
    pub modify_flops: u64,
    pub lca: Option<usize>,
    pub leaves_updated: Vec<usize>,
    pub factors_recomputed: usize,
    /// FLOPs of the reference refactorization, when that solver is active.
    pub reference_flops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSolution {
    /// Primary solution: hierarchical when available, else reference.
    pub v: Vec<f64>,
    pub v_reference: Option<Vec<f64>>,
    pub flops: u64,
    pub rel_err: Option<f64>,
}

/// Owns `G`, its partition tree and the active solvers.
#[derive(Debug, Clone)]
pub struct NetworkSolver {
    net: NetworkModel,
    config: SimulationConfig,
    tree: Arc<PartitionTree>,
    /// `G` in tree order.
    g_tree: ConductanceMatrix,
    hinv: Option<HInverse>,
    reference: Option<DenseFactorization>,
    reference_factor_flops: u64,
}

impl NetworkSolver {
    pub fn new(net: &NetworkModel, config: &SimulationConfig, active: &[bool]) -> Result<Self> {
        config.validate()?;
        let tree = Arc::new(build_partition_tree(net, config.d_th)?);
        let g = assemble_with_faults(net, config.delta_t, active);
        let g_tree = g.permuted(&tree.matrix_permutation());
        let hinv = if config.solver.uses_hierarchical() {
            Some(HInverse::build(&g_tree, Arc::clone(&tree))?)
        } else {
            None
        };
        let (reference, reference_factor_flops) = if config.solver.uses_reference() {
            let f = DenseFactorization::factor(&g)?;
            let c = f.flops().construction;
            (Some(f), c)
        } else {
            (None, 0)
        };
        Ok(Self {
            net: net.clone(),
            config: config.clone(),
            tree,
            g_tree,
            hinv,
            reference,
            reference_factor_flops,
        })
    }

    pub fn tree(&self) -> &Arc<PartitionTree> {
        &self.tree
    }

    pub fn hinv(&self) -> Option<&HInverse> {
        self.hinv.as_ref()
    }

    pub fn reference(&self) -> Option<&DenseFactorization> {
        self.reference.as_ref()
    }

    /// Current `G` in tree order.
    pub fn conductance_tree_order(&self) -> &ConductanceMatrix {
        &self.g_tree
    }

    /// Accumulated FLOPs of every reference factorization.
    pub fn reference_factor_flops(&self) -> u64 {
        self.reference_factor_flops
    }

    /// Solves `G v = i` with the configured solver(s); `i` and the result in
    /// original order.
    pub fn solve(&self, i: &[f64]) -> Result<StepSolution> {
        let hier = match &self.hinv {
            Some(h) => {
                let (y, f) = h.apply_with_flops(&self.tree.to_tree_order(i))?;
                Some((self.tree.to_original_order(&y), f))
            }
            None => None,
        };
        let refr = match &self.reference {
            Some(r) => Some(r.solve_with_flops(i)?),
            None => None,
        };
        Ok(match (hier, refr) {
            (Some((v, f)), Some((vr, _))) => StepSolution {
                rel_err: Some(voltage_error(&v, &vr).value),
                v,
                v_reference: Some(vr),
                flops: f,
            },
            (Some((v, f)), None) => StepSolution {
                v,
                v_reference: None,
                flops: f,
                rel_err: None,
            },
            (None, Some((vr, f))) => StepSolution {
                v: vr.clone(),
                v_reference: Some(vr),
                flops: f,
                rel_err: None,
            },
            (None, None) => unreachable!("at least one solver is configured"),
        })
    }

    /// Switches fault `fault` on or off: re-stamps `G`, patches the
    /// hierarchical inverse with the resulting delta and refactors the
    /// reference.
    pub fn apply_fault_transition(
        &mut self,
        state: &mut SimulationState,
        fault: usize,
        on: bool,
    ) -> Result<FaultTransition> {
        if fault >= self.net.faults.len() {
            return Err(Error::Invalid {
                location: format!("faults[{fault}]"),
                message: "no such fault".into(),
            });
        }
        state.active_faults[fault] = on;
        let g = assemble_with_faults(&self.net, self.config.delta_t, &state.active_faults);
        let g_tree = g.permuted(&self.tree.matrix_permutation());
        let changed = self.g_tree.changed_entries(&g_tree);
        let mut tr = FaultTransition {
            fault,
            on,
            step: state.step,
            t: state.t,
            modify_flops: 0,
            lca: None,
            leaves_updated: Vec::new(),
            factors_recomputed: 0,
            reference_flops: 0,
        };
        if let Some(h) = &mut self.hinv {
            let rep = h.modify(&g_tree, &changed, self.config.modify_options())?;
            tr.modify_flops = rep.flops;
            tr.lca = rep.lca;
            tr.leaves_updated = rep.leaves_updated;
            tr.factors_recomputed = rep.factors_recomputed;
        }
        if self.reference.is_some() {
            let f = DenseFactorization::factor(&g)?;
            tr.reference_flops = f.flops().construction;
            self.reference_factor_flops += tr.reference_flops;
            self.reference = Some(f);
        }
        self.g_tree = g_tree;
        Ok(tr)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputRow {
    pub t: f64,
    pub voltages: Vec<f64>,
    pub flops_solve: u64,
    pub rel_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub network: String,
    pub n_nodes: usize,
    pub config: SimulationConfig,
    pub steps: usize,
    pub recorded_rows: usize,
    pub hierarchical_flops: Option<FlopSnapshot>,
    pub reference_factor_flops: u64,
    pub reference_solve_flops: u64,
    pub max_rel_err: Option<f64>,
    pub mean_rel_err: Option<f64>,
    pub fault_transitions: Vec<FaultTransition>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesOutput {
    pub labels: Vec<String>,
    pub rows: Vec<OutputRow>,
    pub summary: SimulationSummary,
}

impl TimeSeriesOutput {
    /// CSV with header `t,<labels>,flops_solve[,rel_err]`; floats carry 17
    /// significant digits.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let with_err = self.summary.config.solver == SolverKind::Both;
        write!(w, "t")?;
        for l in &self.labels {
            write!(w, ",{l}")?;
        }
        write!(w, ",flops_solve")?;
        if with_err {
            write!(w, ",rel_err")?;
        }
        writeln!(w)?;
        for row in &self.rows {
            write!(w, "{:.16e}", row.t)?;
            for v in &row.voltages {
                write!(w, ",{v:.16e}")?;
            }
            write!(w, ",{}", row.flops_solve)?;
            if with_err {
                write!(w, ",{:.16e}", row.rel_err.unwrap_or(f64::NAN))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = std::fs::File::create(path).map_err(io)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w).map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }
}

fn node_label(net: &NetworkModel, idx: usize) -> String {
    let p = net.phases();
    if p == 1 {
        format!("v{idx}")
    } else {
        format!("v{}_{}", idx / p, idx % p)
    }
}

/// Runs from a cold start.
pub fn run(net: &NetworkModel, config: &SimulationConfig) -> Result<TimeSeriesOutput> {
    run_with_state(net, config, SimulationState::cold(net))
}

/// Runs from `state` (voltages and branch currents at `t = 0`).
pub fn run_with_state(
    net: &NetworkModel,
    config: &SimulationConfig,
    mut state: SimulationState,
) -> Result<TimeSeriesOutput> {
    config.validate()?;
    net.validate()?;
    let dt = config.delta_t;
    let n_steps = config.n_steps();
    let windows: Vec<(usize, usize)> = net
        .faults
        .iter()
        .map(|f| (snap_to_step(f.t_on, dt), snap_to_step(f.t_off, dt)))
        .collect();
    for (k, &(on, off)) in windows.iter().enumerate() {
        state.active_faults[k] = on == 0 && off > 0;
    }
    let mut solver = NetworkSolver::new(net, config, &state.active_faults)?;

    let record: Vec<usize> = match &config.record_nodes {
        Some(nodes) => {
            if let Some(&bad) = nodes.iter().find(|&&i| i >= net.dim()) {
                return Err(Error::Config(format!("record node {bad} out of range")));
            }
            nodes.clone()
        }
        None => (0..net.dim()).collect(),
    };
    let labels = record.iter().map(|&i| node_label(net, i)).collect();
    let phases = net.phases();
    let conductances: Vec<f64> = net
        .branches
        .iter()
        .map(|b| b.element().companion_conductance(dt))
        .collect();

    let mut rows = Vec::with_capacity(n_steps / config.decimation + 1);
    let mut transitions = Vec::new();
    let (mut max_err, mut sum_err, mut n_err) = (0.0_f64, 0.0, 0usize);
    let mut ref_solve_flops = 0;

    for step in 1..=n_steps {
        let t = step as f64 * dt;
        let terms = history_terms(net, &state, dt);
        state.step = step;
        state.t = t;
        for (k, &(on, off)) in windows.iter().enumerate() {
            let target = if step == on {
                Some(true)
            } else if step == off {
                Some(false)
            } else {
                None
            };
            if let Some(on) = target {
                if state.active_faults[k] != on {
                    transitions.push(solver.apply_fault_transition(&mut state, k, on)?);
                }
            }
        }
        let mut i = injection_vector(net, t);
        for (a, h) in i.iter_mut().zip(scatter_history(net, &terms)) {
            *a += h;
        }
        let sol = solver.solve(&i)?;
        if let Some(node) = sol.v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step, node });
        }
        if config.solver == SolverKind::Both {
            ref_solve_flops += 2 * net.dim() as u64 * net.dim() as u64 - net.dim() as u64;
        } else if config.solver == SolverKind::Reference {
            ref_solve_flops += sol.flops;
        }
        for (bi, br) in net.branches.iter().enumerate() {
            for p in 0..phases {
                let a = sol.v[net.node_index(br.from, p)];
                let b = match br.to {
                    Terminal::Bus(b) => sol.v[net.node_index(b, p)],
                    Terminal::Ground => 0.0,
                };
                let k = bi * phases + p;
                state.branch_currents[k] = conductances[bi] * (a - b) + terms[k];
            }
        }
        state.v = sol.v;
        if let Some(e) = sol.rel_err {
            max_err = max_err.max(e);
            sum_err += e;
            n_err += 1;
        }
        if step % config.decimation == 0 {
            rows.push(OutputRow {
                t,
                voltages: record.iter().map(|&i| state.v[i]).collect(),
                flops_solve: sol.flops,
                rel_err: sol.rel_err,
            });
        }
    }

    let summary = SimulationSummary {
        network: net.name.clone(),
        n_nodes: net.dim(),
        config: config.clone(),
        steps: n_steps,
        recorded_rows: rows.len(),
        hierarchical_flops: solver.hinv().map(HInverse::flops),
        reference_factor_flops: solver.reference_factor_flops(),
        reference_solve_flops: ref_solve_flops,
        max_rel_err: (n_err > 0).then_some(max_err),
        mean_rel_err: (n_err > 0).then(|| sum_err / n_err as f64),
        fault_transitions: transitions,
    };
    Ok(TimeSeriesOutput {
        labels,
        rows,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Branch, FaultEvent, SourceWaveform};

    fn config(dt: f64, t_end: f64, solver: SolverKind) -> SimulationConfig {
        SimulationConfig {
            delta_t: dt,
            t_end,
            d_th: 2,
            solver,
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn zero_sources_give_zero_trajectory() {
        let mut net = NetworkModel::with_buses("z", 4, 0.1);
        for i in 0..3 {
            net.branches.push(Branch::series_rl(i, i + 1, 1.0, 1e-3));
        }
        let out = run(&net, &config(1e-4, 1e-2, SolverKind::Both)).unwrap();
        assert_eq!(out.rows.len(), 100);
        assert!(out.rows.iter().all(|r| r.voltages.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn rc_discharge_matches_exponential() {
        let (r, c) = (100.0, 1e-5);
        let tau = r * c;
        let mut net = NetworkModel::with_buses("rc", 1, 0.0);
        net.branches.push(Branch::capacitor(0, Terminal::Ground, c));
        net.branches.push(Branch::resistor(0, Terminal::Ground, r));
        let mut state = SimulationState::cold(&net);
        state.v[0] = 1.0;
        state.branch_currents[0] = -1.0 / r;
        state.branch_currents[1] = 1.0 / r;
        let cfg = config(tau / 100.0, 3.0 * tau, SolverKind::Hierarchical);
        let out = run_with_state(&net, &cfg, state).unwrap();
        for row in &out.rows {
            let exact = (-row.t / tau).exp();
            assert!((row.voltages[0] - exact).abs() <= 0.01 * exact);
        }
    }

    #[test]
    fn fault_windows_snap_and_restore() {
        let mut net = NetworkModel::with_buses("f", 6, 0.05);
        for i in 0..5 {
            net.branches.push(Branch::series_rl(i, i + 1, 1.0, 1e-3));
        }
        net.sources.push(SourceWaveform {
            bus: 0,
            phase: 0,
            magnitude: 1.0,
            frequency: 60.0,
            phase_angle: 0.0,
        });
        net.faults.push(FaultEvent {
            bus_a: 1,
            bus_b: Terminal::Bus(4),
            fault_resistance: 10.0,
            t_on: 1.01e-3,
            t_off: 2e-3,
        });
        let out = run(&net, &config(1e-4, 3e-3, SolverKind::Both)).unwrap();
        let tr = &out.summary.fault_transitions;
        assert_eq!(tr.len(), 2);
        assert_eq!((tr[0].step, tr[0].on), (10, true));
        assert_eq!((tr[1].step, tr[1].on), (20, false));
        assert!(out.summary.max_rel_err.unwrap() < 1.0);
    }

    #[test]
    fn csv_header_shape() {
        let net = NetworkModel::with_buses("c", 2, 1.0);
        let mut net = net;
        net.branches.push(Branch::resistor(0, 1, 1.0));
        let out = run(&net, &config(1e-3, 2e-3, SolverKind::Both)).unwrap();
        let mut buf = Vec::new();
        out.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,v0,v1,flops_solve,rel_err");
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let net = NetworkModel::with_buses("c", 1, 1.0);
        let mut cfg = config(1e-3, 1e-4, SolverKind::Reference);
        assert!(run(&net, &cfg).is_err());
        cfg.t_end = 1.0;
        cfg.d_th = 0;
        assert!(run(&net, &cfg).is_err());
    }
}
