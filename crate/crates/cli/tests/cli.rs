use std::path::Path;
use std::process::{Command, Output};

use hinv_core::network::{load_network, save_network, Branch, NetworkModel, SourceWaveform};

fn hinv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hinv")).args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn two_bus(path: &Path, shunt_g: f64) {
    let mut net = NetworkModel::with_buses("two_bus", 2, shunt_g);
    net.t_end = 1e-3;
    net.branches.push(Branch::series_rl(0, 1, 1.0, 1e-3));
    net.sources.push(SourceWaveform {
        bus: 0,
        phase: 0,
        magnitude: 1.0,
        frequency: 60.0,
        phase_angle: 0.0,
    });
    save_network(&net, path).unwrap();
}

#[test]
fn simulate_two_bus_with_both_solvers() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("two_bus.json");
    two_bus(&net, 0.1);
    let out_dir = dir.path().join("out");
    let out = hinv(&[
        "simulate", "--net", net.to_str().unwrap(), "--dth", "4", "--solver", "both",
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(out_dir.join("voltages.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,v0,v1,flops_solve,rel_err");
    assert_eq!(lines.count(), 50);
}

#[test]
fn simulate_fault_scenario_reports_transitions() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("grid179.json");
    assert!(hinv(&["gen", "--base", "synth179", "--out", net.to_str().unwrap()]).status.success());
    let out_dir = dir.path().join("out");
    let out = hinv(&[
        "simulate", "--net", net.to_str().unwrap(), "--dth", "74", "--solver", "both",
        "--fault", "1:81:10ohm:10ms:30ms", "--out", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert!(summary["max_rel_err"].as_f64().unwrap() <= 1e-3);
    let transitions = summary["fault_transitions"].as_array().unwrap();
    assert_eq!(transitions.len(), 2);
    assert!(transitions.iter().all(|t| t["modify_flops"].as_u64().unwrap() > 0));
}

#[test]
fn missing_network_exits_two_and_names_path() {
    let out = hinv(&["simulate", "--net", "/no/such/grid.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/no/such/grid.json"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(hinv(&["simulate"]).status.code(), Some(2));
    assert_eq!(hinv(&["simulate", "--net", "x.json", "--fault", "1:2:3"]).status.code(), Some(2));
    assert_eq!(hinv(&["gen", "--copies", "0x2", "--out", "x.json"]).status.code(), Some(2));
}

#[test]
fn singular_system_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("floating.json");
    two_bus(&net, 0.0);
    let out = hinv(&["simulate", "--net", net.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn gen_grid_array_size_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        let out = hinv(&["gen", "--copies", "3x4", "--base", "synth179", "--seed", "7", "--out", p.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(load_network(&a).unwrap().n_buses(), 2148);
}

#[test]
fn bench_dth_single_leaf_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let out = hinv(&["bench-dth", "--dth", "2,8,179", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("dth_accuracy.json")).unwrap()).unwrap();
    let points = report["points"].as_array().unwrap();
    assert_eq!(points.len(), 3);
    assert!(points[2]["metrics"]["inverse_error"].as_f64().unwrap() <= 1e-12);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn bench_reports_are_reproducible() {
    let run = || {
        let out = hinv(&["bench-scaling", "--copies", "1x1,1x2"]);
        assert!(out.status.success(), "{}", stderr(&out));
        let mut v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        for p in v["points"].as_array_mut().unwrap() {
            p["wall_ms"] = serde_json::Value::Null;
        }
        v
    };
    assert_eq!(run(), run());
}

#[test]
fn tree_prints_partition() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("g.json");
    assert!(hinv(&["gen", "--out", net.to_str().unwrap()]).status.success());
    let out = hinv(&["tree", "--net", net.to_str().unwrap(), "--dth", "74"]);
    assert!(out.status.success());
    let tree: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(tree["permutation"].as_array().unwrap().len(), 179);
}
