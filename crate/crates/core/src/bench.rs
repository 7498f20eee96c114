//! Benchmark sweeps: accuracy against `d_th`, FLOP scaling over grid
//! arrays, and modification cost against the size of the updated subtree.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::hinv::{HInverse, LeafUpdate, ModifyOptions};
use crate::network::{
    assemble_conductance, assemble_with_faults, generate_grid_array, NetworkModel, TieTemplate,
};
use crate::partition::{build_partition_tree, PartitionTree};
use crate::reference::inverse_error;
use crate::synth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub x: f64,
    pub metrics: BTreeMap<String, f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub experiment: String,
    pub sweep_variable: String,
    pub points: Vec<BenchPoint>,
    /// Fitted log-log slopes keyed by metric.
    pub slopes: BTreeMap<String, f64>,
    pub checks: BTreeMap<String, bool>,
    pub config: serde_json::Value,
    pub config_hash: String,
}

impl BenchmarkReport {
    fn new(experiment: &str, sweep_variable: &str, config: impl Serialize) -> Self {
        let config = serde_json::to_value(config).expect("config serializes");
        Self {
            experiment: experiment.into(),
            sweep_variable: sweep_variable.into(),
            points: Vec::new(),
            slopes: BTreeMap::new(),
            checks: BTreeMap::new(),
            config_hash: config_hash(&config),
            config,
        }
    }

    /// Values of `metric` across the sweep.
    pub fn series(&self, metric: &str) -> Vec<f64> {
        self.points.iter().map(|p| p.metrics[metric]).collect()
    }

    pub fn xs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.x).collect()
    }

    fn fit(&mut self, metric: &str) -> f64 {
        let s = loglog_slope(&self.xs(), &self.series(metric));
        self.slopes.insert(metric.into(), s);
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Hex SHA-256 of the canonical (key-sorted) JSON of `config`.
pub fn config_hash(config: &impl Serialize) -> String {
    let value = serde_json::to_value(config).expect("config serializes");
    let text = serde_json::to_string(&value).expect("value serializes");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "need two points for a slope");
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Number of steps where `series` increases.
pub fn monotone_violations(series: &[f64]) -> usize {
    series.windows(2).filter(|w| w[1] > w[0]).count()
}

/// `{2, 4, 8, …}` below `n`, then `n`.
pub fn doubling_sweep(n: usize) -> Vec<usize> {
    let mut v: Vec<usize> = std::iter::successors(Some(2usize), |d| Some(d * 2))
        .take_while(|&d| d < n)
        .collect();
    v.push(n);
    v
}

#[derive(Serialize)]
struct DthConfig<'a> {
    network: &'a str,
    n_buses: usize,
    delta_t: f64,
    d_th: &'a [usize],
}

/// Relative inverse error for each `d_th`.
pub fn bench_dth(net: &NetworkModel, d_ths: &[usize], delta_t: f64) -> Result<BenchmarkReport> {
    let mut report = BenchmarkReport::new(
        "dth_accuracy",
        "d_th",
        DthConfig {
            network: &net.name,
            n_buses: net.n_buses(),
            delta_t,
            d_th: d_ths,
        },
    );
    let g = assemble_conductance(net, delta_t);
    for &d in d_ths {
        let start = Instant::now();
        let tree = Arc::new(build_partition_tree(net, d)?);
        let gt = g.permuted(&tree.matrix_permutation());
        let h = HInverse::build(&gt, Arc::clone(&tree))?;
        let err = inverse_error(&h, &gt)?.value;
        let mut metrics = BTreeMap::new();
        metrics.insert("inverse_error".into(), err);
        metrics.insert("leaves".into(), tree.leaves().count() as f64);
        metrics.insert("construction_flops".into(), h.flops().construction as f64);
        report.points.push(BenchPoint {
            x: d as f64,
            metrics,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    let errs = report.series("inverse_error");
    report
        .checks
        .insert("non_increasing_le1_violation".into(), monotone_violations(&errs) <= 1);
    if let (Some(first), Some(last)) = (errs.first(), errs.last()) {
        let orders = (first / last.max(f64::MIN_POSITIVE)).log10();
        report.checks.insert("spans_4_orders".into(), orders >= 4.0);
    }
    Ok(report)
}

#[derive(Serialize)]
struct ScalingConfig<'a> {
    base: &'a str,
    base_buses: usize,
    copies: &'a [(usize, usize)],
    d_th: usize,
    delta_t: f64,
}

/// Construction and per-solve FLOPs over `rows × cols` arrays of `base`.
pub fn bench_scaling(
    base: &NetworkModel,
    copies: &[(usize, usize)],
    tie: &TieTemplate,
    d_th: usize,
    delta_t: f64,
) -> Result<BenchmarkReport> {
    let mut report = BenchmarkReport::new(
        "flop_scaling",
        "n_buses",
        ScalingConfig {
            base: &base.name,
            base_buses: base.n_buses(),
            copies,
            d_th,
            delta_t,
        },
    );
    for &(r, c) in copies {
        let start = Instant::now();
        let net = generate_grid_array(base, r, c, tie)?;
        let tree = Arc::new(build_partition_tree(&net, d_th)?);
        let g = assemble_conductance(&net, delta_t).permuted(&tree.matrix_permutation());
        let h = HInverse::build(&g, tree)?;
        let (_, apply) = h.apply_with_flops(&vec![0.0; g.dim()])?;
        let n = g.dim() as f64;
        let dense = 2.0 * n * n - n;
        let mut metrics = BTreeMap::new();
        metrics.insert("construction_flops".into(), h.flops().construction as f64);
        metrics.insert("apply_flops".into(), apply as f64);
        metrics.insert("dense_solve_flops".into(), dense);
        metrics.insert("apply_reduction".into(), 1.0 - apply as f64 / dense);
        report.points.push(BenchPoint {
            x: n,
            metrics,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    report.fit("construction_flops");
    report.fit("apply_flops");
    report.fit("dense_solve_flops");
    let below = report
        .points
        .iter()
        .all(|p| p.metrics["apply_flops"] < p.metrics["dense_solve_flops"]);
    report.checks.insert("apply_below_dense_everywhere".into(), below);
    Ok(report)
}

#[derive(Serialize)]
struct ModifyConfig<'a> {
    network: &'a str,
    n_buses: usize,
    d_th: usize,
    delta_t: f64,
    fault_resistance: f64,
    leaf_update: &'a str,
}

/// One fault per tree depth, placed between the first buses of the two
/// children of the first internal node at that depth, so its LCA is that
/// node. Records modify FLOPs against the LCA subtree size and checks that
/// the pruned and faithful updates agree bit-for-bit.
pub fn bench_modify(
    net: &NetworkModel,
    d_th: usize,
    delta_t: f64,
    leaf_update: LeafUpdate,
) -> Result<BenchmarkReport> {
    const R_FAULT: f64 = 10.0;
    let mut report = BenchmarkReport::new(
        "modify_complexity",
        "lca_subtree_buses",
        ModifyConfig {
            network: &net.name,
            n_buses: net.n_buses(),
            d_th,
            delta_t,
            fault_resistance: R_FAULT,
            leaf_update: match leaf_update {
                LeafUpdate::LowRank => "low_rank",
                LeafUpdate::Reinvert => "reinvert",
            },
        },
    );
    let tree = Arc::new(build_partition_tree(net, d_th)?);
    let perm = tree.matrix_permutation();
    let g = assemble_conductance(net, delta_t).permuted(&perm);
    let base = HInverse::build(&g, Arc::clone(&tree))?;
    let mut all_identical = true;

    for node in lca_per_depth(&tree) {
        let start = Instant::now();
        let nd = tree.node(node);
        let (l, r) = (nd.left.expect("internal"), nd.right.expect("internal"));
        let a = tree.bus_order()[tree.node(l).bus_range.start];
        let b = tree.bus_order()[tree.node(r).bus_range.start];
        let mut faulted = net.clone();
        faulted.faults = vec![synth::fault(a, b, R_FAULT, 0.0, 1.0)];
        let g_new = assemble_with_faults(&faulted, delta_t, &[true]).permuted(&perm);
        let changed = g.changed_entries(&g_new);

        let mut pruned = base.clone();
        let rep = pruned.modify(&g_new, &changed, ModifyOptions { faithful: false, leaf_update })?;
        let mut faithful = base.clone();
        let rep_f = faithful.modify(&g_new, &changed, ModifyOptions { faithful: true, leaf_update })?;
        let identical = pruned.bitwise_eq(&faithful);
        all_identical &= identical;

        let mut metrics = BTreeMap::new();
        metrics.insert("modify_flops".into(), rep.flops as f64);
        metrics.insert("modify_flops_within_lca".into(), (rep.flops - rep.flops_above_lca) as f64);
        metrics.insert("faithful_modify_flops".into(), rep_f.flops as f64);
        metrics.insert("lca_node".into(), node as f64);
        metrics.insert("bitwise_identical".into(), f64::from(u8::from(identical)));
        report.points.push(BenchPoint {
            x: nd.n_buses() as f64,
            metrics,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    if report.points.len() >= 2 {
        report.fit("modify_flops");
        report.fit("modify_flops_within_lca");
        report.fit("faithful_modify_flops");
    }
    report.checks.insert("pruned_equals_faithful".into(), all_identical);
    Ok(report)
}

/// First internal node (lowest id) at each depth, shallowest first.
fn lca_per_depth(tree: &PartitionTree) -> Vec<usize> {
    let mut seen = BTreeMap::new();
    for n in tree.nodes().iter().filter(|n| !n.is_leaf()) {
        seen.entry(n.depth).or_insert(n.id);
    }
    seen.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powi(2)).collect();
        assert!((loglog_slope(&xs, &ys) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn violations_count_increases_only() {
        assert_eq!(monotone_violations(&[3.0, 2.0, 2.0, 1.0]), 0);
        assert_eq!(monotone_violations(&[3.0, 4.0, 1.0, 2.0]), 2);
    }

    #[test]
    fn doubling_sweep_ends_at_n() {
        assert_eq!(doubling_sweep(20), vec![2, 4, 8, 16, 20]);
        assert_eq!(doubling_sweep(16), vec![2, 4, 8, 16]);
    }

    #[test]
    fn config_hash_is_stable() {
        let a = config_hash(&serde_json::json!({"b": 1, "a": 2}));
        let b = config_hash(&serde_json::json!({"a": 2, "b": 1}));
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn modify_bench_on_small_lattice() {
        let net = synth::lattice(8, 8);
        let rep = bench_modify(&net, 4, 20e-6, LeafUpdate::LowRank).unwrap();
        assert!(rep.checks["pruned_equals_faithful"]);
        assert!(rep.points.len() >= 3);
    }
}
