use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use plver_core::allocation::{
    greedy_allocate, isoa_allocate_with, list_position_level, preference_rank_histogram, EvictionRule,
    IsoaStats, RankHistogram,
};
use plver_core::model::{level_of, load_trace, synthesize_trace, write_trace, Topology, Trace};
use plver_core::simulator::{
    sized_topology, write_cluster_csv, write_metrics_csv, Experiment, RunResult, SimError, Strategy,
    WindowMetrics,
};
use plver_core::Allocation;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, RankMetric, TopologySource, TraceSource};
use crate::CliError;

pub struct Inputs {
    pub topology: Topology,
    pub trace: Trace,
    /// Sources that were synthesized rather than read, so they can be saved
    /// next to the results.
    pub synthesized_topology: bool,
    pub synthesized_trace: bool,
}

/// Loads or synthesizes the topology and trace named by `cfg`.
pub fn load_inputs(cfg: &ExperimentConfig) -> Result<Inputs, CliError> {
    let (mut trace, synthesized_trace) = match &cfg.trace {
        TraceSource::File(path) => (
            load_trace(path, cfg.window_secs).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?,
            false,
        ),
        TraceSource::Synth(p) => (
            synthesize_trace(&cfg.trace_params(p)).map_err(|e| CliError::Config(format!("trace.synth: {e}")))?,
            true,
        ),
    };
    for w in &trace.warnings {
        log::warn!("trace: {w}");
    }
    if let Some(n) = cfg.windows {
        trace.windows.truncate(n);
    }
    if trace.windows.is_empty() {
        return Err(CliError::Data("trace has no windows".into()));
    }
    let (topology, synthesized_topology) = match &cfg.topology {
        TopologySource::File(path) => (load_topology_file(path)?, false),
        TopologySource::Synth(p) => {
            let topo = sized_topology(&cfg.topology_params(p), &trace).map_err(|e| match e {
                SimError::Topology(e) => CliError::Config(format!("topology.synth: {e}")),
                e => CliError::Data(e.to_string()),
            })?;
            (topo, true)
        }
    };
    Ok(Inputs { topology, trace, synthesized_topology, synthesized_trace })
}

fn load_topology_file(path: &Path) -> Result<Topology, CliError> {
    Topology::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn save_inputs(inputs: &Inputs, out: &Path) -> Result<(), CliError> {
    if inputs.synthesized_topology {
        write_file(&out.join("topology.json"), inputs.topology.to_json())?;
    }
    if inputs.synthesized_trace {
        let mut buf = Vec::new();
        write_trace(&inputs.trace, &mut buf).expect("in-memory write");
        write_file(&out.join("trace.jsonl"), buf)?;
    }
    Ok(())
}

fn histogram(
    alloc: &Allocation,
    topo: &Topology,
    metric: RankMetric,
) -> Result<RankHistogram, CliError> {
    let result = match metric {
        RankMetric::TableLevel => preference_rank_histogram(alloc, &topo.groups, &topo.clusters, level_of),
        RankMetric::ListPosition => preference_rank_histogram(
            alloc,
            &topo.groups,
            &topo.clusters,
            list_position_level(&topo.preferences),
        ),
    };
    result.map_err(|e| CliError::Data(e.to_string()))
}

pub struct AllocateReport {
    pub isoa: Allocation,
    pub greedy: Allocation,
    pub stats: IsoaStats,
    pub isoa_histogram: RankHistogram,
    pub greedy_histogram: RankHistogram,
    pub files: Vec<PathBuf>,
}

/// Runs the stable allocation and the greedy baseline and writes both, their
/// rank histograms and a side-by-side comparison to `cfg.out`.
pub fn allocate(cfg: &ExperimentConfig) -> Result<AllocateReport, CliError> {
    cfg.validate()?;
    // a topology file needs no trace; a synthesized one is sized from it
    let inputs = match &cfg.topology {
        TopologySource::File(path) => Inputs {
            topology: load_topology_file(path)?,
            trace: Trace { window_secs: cfg.window_secs, windows: Vec::new(), warnings: Vec::new() },
            synthesized_topology: false,
            synthesized_trace: false,
        },
        TopologySource::Synth(_) => load_inputs(cfg)?,
    };
    let topo = &inputs.topology;
    let (isoa, stats) = isoa_allocate_with(&topo.groups, &topo.clusters, &topo.preferences, EvictionRule::default());
    if !stats.converged {
        log::warn!("allocation repair budget ran out; the result may admit a blocking pair");
    }
    let greedy = greedy_allocate(&topo.groups, &topo.clusters, &topo.preferences);
    let isoa_histogram = histogram(&isoa, topo, cfg.rank_metric)?;
    let greedy_histogram = histogram(&greedy, topo, cfg.rank_metric)?;

    create_dir(&cfg.out)?;
    save_inputs(&inputs, &cfg.out)?;
    let mut files = Vec::new();
    for (name, contents) in [
        ("allocation_isoa.json", isoa.to_json()),
        ("allocation_greedy.json", greedy.to_json()),
        ("histogram_isoa.csv", isoa_histogram.to_csv()),
        ("histogram_greedy.csv", greedy_histogram.to_csv()),
        ("rank_comparison.csv", rank_comparison(&isoa_histogram, &greedy_histogram)),
    ] {
        let path = cfg.out.join(name);
        write_file(&path, contents)?;
        files.push(path);
    }
    Ok(AllocateReport { isoa, greedy, stats, isoa_histogram, greedy_histogram, files })
}

/// `level,isoa,greedy,delta` with delta = isoa - greedy.
pub fn rank_comparison(isoa: &RankHistogram, greedy: &RankHistogram) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["level", "isoa", "greedy", "delta"]).expect("in-memory write");
    for ((label, a), (_, b)) in isoa.rows().into_iter().zip(greedy.rows()) {
        let delta = a as i64 - b as i64;
        w.write_record([label, a.to_string(), b.to_string(), delta.to_string()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub strategy: Strategy,
    pub alpha: f64,
    pub fluctuation: f64,
    pub mean_offloading: f64,
    pub edge_kb: u64,
    pub origin_kb: u64,
    /// Mean per-tier satisfaction over the windows where the tier had viewers.
    pub satisfaction: BTreeMap<u32, f64>,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationSummary {
    pub groups: usize,
    pub allocated: usize,
    pub unallocated: usize,
    pub converged: bool,
    pub repairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub windows: usize,
    pub segment_secs: u64,
    pub allocation: AllocationSummary,
    /// Mean offloading per strategy, one value per entry of `alphas`, at the
    /// first listed fluctuation.
    pub alphas: Vec<f64>,
    pub mean_by_alpha: BTreeMap<Strategy, Vec<f64>>,
    pub cells: Vec<CellSummary>,
    pub violations: usize,
}

pub struct SimulateReport {
    pub summary: Summary,
    pub rows: usize,
    pub files: Vec<PathBuf>,
}

fn cell_summary(strategy: Strategy, alpha: f64, fluctuation: f64, run: &RunResult) -> CellSummary {
    let mut tiers: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for w in &run.windows {
        for (&tier, &s) in &w.satisfaction {
            let e = tiers.entry(tier).or_default();
            e.0 += s;
            e.1 += 1;
        }
    }
    CellSummary {
        strategy,
        alpha,
        fluctuation,
        mean_offloading: run.mean_offloading(),
        edge_kb: run.windows.iter().map(|w| w.edge_kb).sum(),
        origin_kb: run.windows.iter().map(|w| w.origin_kb).sum(),
        satisfaction: tiers.into_iter().map(|(t, (sum, n))| (t, sum / n as f64)).collect(),
        violations: run.violations(),
    }
}

/// File name of a grid cell's per-cluster CSV.
pub fn cluster_file_name(strategy: Strategy, alpha: f64, fluctuation: f64) -> String {
    format!("{strategy}_a{alpha:.2}_f{fluctuation:.2}.csv")
}

/// Replays the full strategy x alpha x fluctuation grid. Cells run in
/// parallel on up to `jobs` threads (all cores when `None`); files are
/// written afterwards in grid order, so the output does not depend on it.
pub fn simulate(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<SimulateReport, CliError> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let topo = &inputs.topology;
    let (alloc, stats) = isoa_allocate_with(&topo.groups, &topo.clusters, &topo.preferences, EvictionRule::default());
    if !stats.converged {
        log::warn!("allocation repair budget ran out; the result may admit a blocking pair");
    }
    let allocation = AllocationSummary {
        groups: topo.groups.len(),
        allocated: alloc.assigned.len(),
        unallocated: alloc.unallocated.len(),
        converged: stats.converged,
        repairs: stats.repairs,
    };
    let alloc_json = alloc.to_json();
    let exp = Experiment::new(topo, alloc, &inputs.trace)
        .map_err(|e| CliError::Data(e.to_string()))?
        .with_mode(cfg.dispatch);

    let grid: Vec<(Strategy, f64, f64)> = cfg
        .strategies
        .iter()
        .flat_map(|&s| cfg.alphas.iter().flat_map(move |&a| cfg.fluctuations.iter().map(move |&f| (s, a, f))))
        .collect();
    let run_grid = || -> Result<Vec<RunResult>, SimError> {
        grid.par_iter().map(|&(s, a, f)| exp.run(s, a, f, cfg.seed)).collect()
    };
    let runs = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("jobs: {e}")))?
            .install(run_grid),
        None => run_grid(),
    }
    .map_err(|e| CliError::Data(e.to_string()))?;

    let mut rows: Vec<WindowMetrics> = Vec::new();
    let mut cells = Vec::with_capacity(grid.len());
    let mut files = Vec::new();
    let cluster_dir = cfg.out.join("clusters");
    create_dir(&cluster_dir)?;
    save_inputs(&inputs, &cfg.out)?;
    for (&(s, a, f), run) in grid.iter().zip(&runs) {
        cells.push(cell_summary(s, a, f, run));
        let mut buf = Vec::new();
        write_cluster_csv(&run.cluster_totals(), &mut buf).map_err(|e| CliError::Data(e.to_string()))?;
        let path = cluster_dir.join(cluster_file_name(s, a, f));
        write_file(&path, buf)?;
        files.push(path);
        rows.extend(run.windows.iter().cloned());
    }
    let violations: usize = cells.iter().map(|c| c.violations).sum();
    if violations > 0 {
        log::warn!("{violations} capacity or conservation violations; see summary.json");
    }

    let first_f = cfg.fluctuations[0];
    let mut mean_by_alpha: BTreeMap<Strategy, Vec<f64>> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.fluctuation == first_f) {
        mean_by_alpha.entry(c.strategy).or_default().push(c.mean_offloading);
    }
    let summary = Summary {
        seed: cfg.seed,
        windows: exp.snapshots().len(),
        segment_secs: cfg.segment_secs,
        allocation,
        alphas: cfg.alphas.clone(),
        mean_by_alpha,
        cells,
        violations,
    };

    let mut metrics = Vec::new();
    write_metrics_csv(&rows, &mut metrics).map_err(|e| CliError::Data(e.to_string()))?;
    for (name, contents) in [
        ("metrics.csv", metrics),
        ("summary.json", serde_json::to_vec_pretty(&summary).expect("summary serializes")),
        ("allocation.json", alloc_json.into_bytes()),
    ] {
        let path = cfg.out.join(name);
        write_file(&path, contents)?;
        files.push(path);
    }
    Ok(SimulateReport { summary, rows: rows.len(), files })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comparison_rows_and_delta() {
        let a = RankHistogram { counts: [3, 1, 0, 0, 0, 0], unallocated: 0 };
        let b = RankHistogram { counts: [2, 1, 0, 0, 0, 0], unallocated: 1 };
        let text = rank_comparison(&a, &b);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "level,isoa,greedy,delta");
        assert_eq!(lines[1], "1,3,2,1");
        assert_eq!(lines[7], "unallocated,0,1,-1");
    }

    #[test]
    fn cluster_file_names_are_stable() {
        assert_eq!(cluster_file_name(Strategy::Plver, 0.6, 0.0), "plver_a0.60_f0.00.csv");
    }
}
