//! `hinv`: fault simulation, benchmark sweeps, network generation and
//! partition inspection on top of `hinv-core`.

mod parse;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hinv_core::bench::{self, BenchmarkReport};
use hinv_core::hinv::LeafUpdate;
use hinv_core::network::{generate_grid_array, load_network, save_network, FaultEvent, NetworkModel};
use hinv_core::partition::build_partition_tree;
use hinv_core::sim::{self, SimulationConfig, SolverKind};
use hinv_core::synth;

#[derive(Parser)]
#[command(name = "hinv", version, about = "Hierarchical inverse EMT solver and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a transient simulation and write the voltage CSV and summary JSON.
    Simulate(SimulateArgs),
    /// Inverse error as a function of the leaf threshold.
    BenchDth(BenchDthArgs),
    /// Construction and solve FLOPs over grid arrays.
    BenchScaling(BenchScalingArgs),
    /// Modification FLOPs against the size of the updated subtree.
    BenchModify(BenchModifyArgs),
    /// Generate a synthetic network file.
    Gen(GenArgs),
    /// Print the partition tree of a network as JSON.
    Tree(TreeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Hierarchical,
    Reference,
    Both,
}

impl From<Solver> for SolverKind {
    fn from(s: Solver) -> Self {
        match s {
            Solver::Hierarchical => SolverKind::Hierarchical,
            Solver::Reference => SolverKind::Reference,
            Solver::Both => SolverKind::Both,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Base {
    Synth179,
    Lattice,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long, default_value_t = 74)]
    dth: usize,
    /// Step, e.g. `20us` or `2e-5`. Defaults to the network's value.
    #[arg(long, value_parser = parse::seconds)]
    dt: Option<f64>,
    /// Horizon, e.g. `60ms`. Defaults to the network's value.
    #[arg(long, value_parser = parse::seconds)]
    tend: Option<f64>,
    #[arg(long, value_enum, default_value = "hierarchical")]
    solver: Solver,
    /// `A:B:RESohm:TON:TOFF`; `B` may be `gnd`. Repeatable.
    #[arg(long, value_parser = parse::fault)]
    fault: Vec<FaultEvent>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Recompute every factor under the LCA instead of only the stale ones.
    #[arg(long)]
    faithful_update: bool,
    /// Re-invert changed leaves instead of a low-rank update.
    #[arg(long)]
    leaf_reinvert: bool,
    /// Keep every k-th step in the CSV.
    #[arg(long, default_value_t = 1)]
    decimation: usize,
}

#[derive(Args)]
struct NetSource {
    /// Network file; overrides `--base`.
    #[arg(long)]
    net: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "synth179")]
    base: Base,
    #[arg(long, default_value_t = synth::DEFAULT_SEED)]
    seed: u64,
    /// Lattice shape for `--base lattice`.
    #[arg(long, value_parser = parse::copies, default_value = "32x64")]
    lattice: (usize, usize),
}

impl NetSource {
    fn load(&self) -> Result<NetworkModel> {
        match &self.net {
            Some(path) => Ok(load_network(path)?),
            None => Ok(base_network(self.base, self.seed, self.lattice)),
        }
    }
}

#[derive(Args)]
struct BenchDthArgs {
    #[command(flatten)]
    source: NetSource,
    /// Comma-separated thresholds; defaults to 2, 4, 8, … and N.
    #[arg(long, value_delimiter = ',')]
    dth: Vec<usize>,
    #[arg(long, value_parser = parse::seconds, default_value = "20us")]
    dt: f64,
    /// Directory for the report JSON; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchScalingArgs {
    #[command(flatten)]
    source: NetSource,
    #[arg(long, value_delimiter = ',', value_parser = parse::copies, default_value = "1x1,1x2,2x2,3x3,3x4")]
    copies: Vec<(usize, usize)>,
    #[arg(long, default_value_t = 74)]
    dth: usize,
    #[arg(long, value_parser = parse::seconds, default_value = "20us")]
    dt: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchModifyArgs {
    #[command(flatten)]
    source: NetSource,
    #[arg(long, default_value_t = 16)]
    dth: usize,
    #[arg(long, value_parser = parse::seconds, default_value = "20us")]
    dt: f64,
    #[arg(long)]
    leaf_reinvert: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "synth179")]
    base: Base,
    #[arg(long, value_parser = parse::copies, default_value = "1x1")]
    copies: (usize, usize),
    #[arg(long, default_value_t = synth::DEFAULT_SEED)]
    seed: u64,
    #[arg(long, value_parser = parse::copies, default_value = "32x64")]
    lattice: (usize, usize),
    /// Output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TreeArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long, default_value_t = 74)]
    dth: usize,
}

fn base_network(base: Base, seed: u64, (rows, cols): (usize, usize)) -> NetworkModel {
    match base {
        Base::Synth179 => synth::synth179(seed),
        Base::Lattice => synth::lattice(rows, cols),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

/// Writes to stdout; a closed pipe is not an error.
fn print_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn emit_report(report: &BenchmarkReport, out: Option<&Path>) -> Result<()> {
    let json = report.to_json();
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
            let path = dir.join(format!("{}.json", report.experiment));
            write_file(&path, &json)?;
            eprintln!("wrote {}", path.display());
        }
        None => print_stdout(&json)?,
    }
    for (name, slope) in &report.slopes {
        eprintln!("slope {name}: {slope:.3}");
    }
    for (name, ok) in &report.checks {
        eprintln!("check {name}: {}", if *ok { "ok" } else { "violated" });
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut net = load_network(&args.net)?;
    if let Some(t) = args.tend {
        net.t_end = t;
    }
    if let Some(dt) = args.dt {
        net.delta_t = dt;
    }
    net.faults.extend(args.fault);
    let config = SimulationConfig {
        delta_t: net.delta_t,
        t_end: net.t_end,
        d_th: args.dth,
        solver: args.solver.into(),
        decimation: args.decimation,
        faithful_update: args.faithful_update,
        leaf_reinvert: args.leaf_reinvert,
        record_nodes: None,
    };
    let out = sim::run(&net, &config)?;
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let csv = args.out.join("voltages.csv");
    out.save_csv(&csv)?;
    let summary = args.out.join("summary.json");
    write_file(&summary, &out.summary_json())?;
    let s = &out.summary;
    eprintln!("{} steps on {} nodes; wrote {} and {}", s.steps, s.n_nodes, csv.display(), summary.display());
    if let Some(e) = s.max_rel_err {
        eprintln!("max relative voltage error {e:.3e}");
    }
    for tr in &s.fault_transitions {
        eprintln!(
            "fault {} {} at step {}: {} modify FLOPs",
            tr.fault,
            if tr.on { "on" } else { "off" },
            tr.step,
            tr.modify_flops
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::BenchDth(args) => {
            let net = args.source.load()?;
            let d_ths = if args.dth.is_empty() {
                bench::doubling_sweep(net.n_buses())
            } else {
                args.dth
            };
            emit_report(&bench::bench_dth(&net, &d_ths, args.dt)?, args.out.as_deref())
        }
        Command::BenchScaling(args) => {
            let base = args.source.load()?;
            let report = bench::bench_scaling(&base, &args.copies, &synth::array_tie(), args.dth, args.dt)?;
            emit_report(&report, args.out.as_deref())
        }
        Command::BenchModify(args) => {
            let net = args.source.load()?;
            let leaf_update = if args.leaf_reinvert {
                LeafUpdate::Reinvert
            } else {
                LeafUpdate::LowRank
            };
            emit_report(&bench::bench_modify(&net, args.dth, args.dt, leaf_update)?, args.out.as_deref())
        }
        Command::Gen(args) => {
            let base = base_network(args.base, args.seed, args.lattice);
            let (rows, cols) = args.copies;
            let net = generate_grid_array(&base, rows, cols, &synth::array_tie())?;
            save_network(&net, &args.out)?;
            eprintln!("wrote {} ({} buses, {} branches)", args.out.display(), net.n_buses(), net.branches.len());
            Ok(())
        }
        Command::Tree(args) => {
            let net = load_network(&args.net)?;
            print_stdout(&build_partition_tree(&net, args.dth)?.to_json())
        }
    }
}

/// 2 for bad input (missing or invalid files, bad parameters), 1 for
/// failures inside the solvers.
fn exit_code(err: &anyhow::Error) -> u8 {
    use hinv_core::Error as E;
    match err.downcast_ref::<E>() {
        Some(
            E::Io { .. }
            | E::Parse { .. }
            | E::DanglingBus { .. }
            | E::NonPositive { .. }
            | E::Disconnected { .. }
            | E::Invalid { .. }
            | E::UnknownBus(_)
            | E::Config(_),
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // Core errors already embed their cause in the message.
            if err.downcast_ref::<hinv_core::Error>().is_some() {
                eprintln!("error: {err}");
            } else {
                eprintln!("error: {err:#}");
            }
            ExitCode::from(exit_code(&err))
        }
    }
}
