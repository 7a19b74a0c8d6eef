//! `lcp` — scenario runner, overlap auditor and seed sweeper for the XRP
//! LCP simulator.
//!
//! Exit codes compose with CI: 0 clean, 1 usage or scenario errors, 2 a
//! fork was detected, 3 the network is stuck.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::thread;

use clap::{Parser, Subcommand};

use lcp_sim::report::StuckVerdict;
use lcp_sim::scenario::parse_scenario;
use lcp_sim::trust::OverlapCondition;
use lcp_sim::{run, RunReport, Scenario};

#[derive(Parser)]
#[command(
    name = "lcp",
    version,
    about = "XRP LCP consensus simulator and analyzer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print (or write) its report.
    Run {
        /// Scenario file path.
        path: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario's tick budget.
        #[arg(long = "max-ticks")]
        max_ticks: Option<u64>,
        /// Override the scenario's civil probe length (0 disables).
        #[arg(long = "probe-ticks")]
        probe_ticks: Option<u64>,
        /// Write the report here instead of standard output.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Audit every ordered node pair of a scenario's trust graph against
    /// an overlap condition.
    Audit {
        /// Scenario file path.
        path: PathBuf,
        /// One of: whitepaper, armknecht, same-seq-accountable,
        /// same-seq-byzantine, fork-safety.
        #[arg(long, value_parser = parse_condition)]
        condition: OverlapCondition,
    },
    /// Run one scenario under a range of seeds and aggregate verdicts.
    Sweep {
        /// Scenario file path.
        path: PathBuf,
        /// Seed range `lo..hi` (half open), e.g. 0..100.
        #[arg(long)]
        seeds: String,
        /// Override the scenario's civil probe length (0 disables).
        #[arg(long = "probe-ticks")]
        probe_ticks: Option<u64>,
        /// Worker threads (defaults to available parallelism).
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn parse_condition(s: &str) -> Result<OverlapCondition, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Run {
            path,
            seed,
            max_ticks,
            probe_ticks,
            report,
        } => {
            let mut scenario = load(&path)?;
            if let Some(seed) = seed {
                scenario.seed = seed;
            }
            if let Some(ticks) = max_ticks {
                scenario.max_ticks = ticks;
            }
            if let Some(probe) = probe_ticks {
                scenario.probe_ticks = probe;
            }
            let run_report = run(&scenario).map_err(|e| e.to_string())?;
            let rendered = run_report.render();
            match report {
                Some(path) => {
                    std::fs::write(&path, &rendered)
                        .map_err(|e| format!("writing {}: {e}", path.display()))?;
                    println!("{}", summary_line(&run_report));
                }
                None => print!("{rendered}"),
            }
            Ok(exit_for(&run_report))
        }
        Command::Audit { path, condition } => {
            let scenario = load(&path)?;
            let graph = &scenario.graph;
            println!("audit condition={condition} nodes={}", graph.node_count());
            println!("i j n_i n_j overlap t_ij margin verdict");
            let mut failing = 0usize;
            for i in graph.node_ids() {
                for j in graph.node_ids() {
                    if i == j {
                        continue;
                    }
                    let check = graph
                        .check_pair(i, j, condition)
                        .map_err(|e| e.to_string())?;
                    let overlap = graph.overlap(i, j).map_err(|e| e.to_string())?;
                    let t_ij = graph.pair_fault_bound(i, j).map_err(|e| e.to_string())?;
                    if !check.holds {
                        failing += 1;
                    }
                    println!(
                        "{i} {j} {} {} {overlap} {t_ij} {} {}",
                        graph.unl_size(i),
                        graph.unl_size(j),
                        check.margin_display(),
                        if check.holds { "pass" } else { "FAIL" }
                    );
                }
            }
            println!("failing-pairs {failing}");
            Ok(if failing == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Sweep {
            path,
            seeds,
            probe_ticks,
            workers,
        } => {
            let mut scenario = load(&path)?;
            if let Some(probe) = probe_ticks {
                scenario.probe_ticks = probe;
            }
            let (lo, hi) = parse_seed_range(&seeds)?;
            let results = sweep(&scenario, lo, hi, workers.unwrap_or_else(default_workers));
            let mut forks = 0usize;
            let mut stucks = 0usize;
            for (seed, fork, stuck) in &results {
                if *fork {
                    forks += 1;
                }
                if *stuck {
                    stucks += 1;
                }
                println!(
                    "seed {seed} fork={} stuck={}",
                    u8::from(*fork),
                    u8::from(*stuck)
                );
            }
            println!("seeds {} forks {forks} stuck {stucks}", hi - lo);
            Ok(if forks > 0 {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            })
        }
    }
}

fn load(path: &PathBuf) -> Result<Scenario, String> {
    let text =
        std::fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
    parse_scenario(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn summary_line(report: &RunReport) -> String {
    let fork = match &report.fork {
        None => "none".to_string(),
        Some(w) => format!("nodes={},{}", w.nodes.0, w.nodes.1),
    };
    let stuck = match &report.stuck {
        StuckVerdict::NotProbed => "not-probed".to_string(),
        StuckVerdict::Clear { .. } => "clear".to_string(),
        StuckVerdict::Stuck(e) => format!("{}-nodes", e.stuck.len()),
    };
    format!("ticks={} fork={fork} stuck={stuck}", report.ticks_run)
}

fn exit_for(report: &RunReport) -> ExitCode {
    if report.fork.is_some() {
        ExitCode::from(2)
    } else if report.stuck.is_stuck() {
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    }
}

fn parse_seed_range(s: &str) -> Result<(u64, u64), String> {
    let (lo, hi) = s
        .split_once("..")
        .ok_or_else(|| format!("seed range must look like 0..100, got `{s}`"))?;
    let lo: u64 = lo.parse().map_err(|_| format!("bad seed `{lo}`"))?;
    let hi: u64 = hi.parse().map_err(|_| format!("bad seed `{hi}`"))?;
    if hi <= lo {
        return Err(format!("empty seed range `{s}`"));
    }
    Ok((lo, hi))
}

fn default_workers() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs one simulation per seed, fanned out over worker threads; results
/// come back ordered by seed so output and aggregation are deterministic.
fn sweep(scenario: &Scenario, lo: u64, hi: u64, workers: usize) -> Vec<(u64, bool, bool)> {
    let seeds: Vec<u64> = (lo..hi).collect();
    let mut results: BTreeMap<u64, (bool, bool)> = BTreeMap::new();
    let chunk = seeds.len().div_ceil(workers.max(1));
    thread::scope(|scope| {
        let mut handles = Vec::new();
        for part in seeds.chunks(chunk.max(1)) {
            handles.push(scope.spawn(move || {
                part.iter()
                    .map(|&seed| {
                        let mut s = scenario.clone();
                        s.seed = seed;
                        let report = run(&s).expect("scenario validated at load");
                        (seed, report.fork.is_some(), report.stuck.is_stuck())
                    })
                    .collect::<Vec<_>>()
            }));
        }
        for h in handles {
            for (seed, fork, stuck) in h.join().expect("sweep worker panicked") {
                results.insert(seed, (fork, stuck));
            }
        }
    });
    results
        .into_iter()
        .map(|(seed, (fork, stuck))| (seed, fork, stuck))
        .collect()
}
