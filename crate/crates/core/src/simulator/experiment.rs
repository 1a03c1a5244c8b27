use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dispatch::{merge, mix_seed, ClusterOutcome};
use super::{dispatch_cluster, ClusterPlan, SimError, Strategy, Traffic, WindowMetrics};
use crate::allocation::{isoa_allocate, Allocation};
use crate::model::{apply_fluctuation, build_snapshot, ClusterId, Topology, Trace, ViewershipSnapshot};
use crate::replication::{abr_schedule, cluster_demand, plver_schedule, ReplicationError};

/// Which requests a window's schedule is tested against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchMode {
    /// Schedule and dispatch on the same window (perturbed by the
    /// fluctuation, if any).
    #[default]
    SameWindow,
    /// Schedule on window t, dispatch on window t + 1; the last window only
    /// schedules.
    NextWindow,
}

/// A topology, its allocation and the per-window snapshots of a trace, ready
/// to be replayed under any strategy.
#[derive(Debug, Clone)]
pub struct Experiment<'a> {
    topology: &'a Topology,
    allocation: Allocation,
    snapshots: Vec<ViewershipSnapshot>,
    mode: DispatchMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub windows: Vec<WindowMetrics>,
}

impl RunResult {
    /// Mean of the per-window offloading ratios.
    pub fn mean_offloading(&self) -> f64 {
        super::mean_offloading(&self.windows)
    }

    /// Traffic per cluster summed over all windows.
    pub fn cluster_totals(&self) -> BTreeMap<ClusterId, Traffic> {
        let mut out: BTreeMap<ClusterId, Traffic> = BTreeMap::new();
        for w in &self.windows {
            for (c, t) in &w.per_cluster {
                out.entry(c.clone()).or_default().add(*t);
            }
        }
        out
    }

    pub fn violations(&self) -> usize {
        self.windows.iter().map(|w| w.violations.len()).sum()
    }
}

impl<'a> Experiment<'a> {
    pub fn new(topology: &'a Topology, allocation: Allocation, trace: &Trace) -> Result<Self, SimError> {
        if trace.windows.is_empty() {
            return Err(SimError::EmptyTrace);
        }
        let snapshots = trace
            .windows
            .iter()
            .map(|w| build_snapshot(w, &topology.groups, trace.window_secs))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { topology, allocation, snapshots, mode: DispatchMode::default() })
    }

    pub fn with_mode(mut self, mode: DispatchMode) -> Self {
        self.mode = mode;
        self
    }

    /// Keeps only the first `n` windows.
    pub fn truncate(&mut self, n: usize) {
        self.snapshots.truncate(n);
    }

    pub fn allocation(&self) -> &Allocation {
        &self.allocation
    }

    pub fn snapshots(&self) -> &[ViewershipSnapshot] {
        &self.snapshots
    }

    /// Replays every window. Clusters are processed in parallel and merged in
    /// topology order, so the result does not depend on the thread count.
    pub fn run(
        &self,
        strategy: Strategy,
        alpha: f64,
        fluctuation: f64,
        seed: u64,
    ) -> Result<RunResult, SimError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(ReplicationError::Alpha(alpha).into());
        }
        let pairs: Vec<(usize, usize)> = match self.mode {
            DispatchMode::SameWindow => (0..self.snapshots.len()).map(|t| (t, t)).collect(),
            DispatchMode::NextWindow => (1..self.snapshots.len()).map(|t| (t - 1, t)).collect(),
        };
        let mut windows = Vec::with_capacity(pairs.len());
        for (plan_t, serve_t) in pairs {
            let planned = &self.snapshots[plan_t];
            let base = &self.snapshots[serve_t];
            let served = if fluctuation > 0.0 {
                apply_fluctuation(base, fluctuation, mix_seed(seed, base.window.start, "fluctuation"))?
            } else {
                base.clone()
            };
            windows.push(self.window(strategy, alpha, fluctuation, seed, planned, &served)?);
        }
        Ok(RunResult { windows })
    }

    fn window(
        &self,
        strategy: Strategy,
        alpha: f64,
        fluctuation: f64,
        seed: u64,
        planned: &ViewershipSnapshot,
        served: &ViewershipSnapshot,
    ) -> Result<WindowMetrics, SimError> {
        let parts: Vec<(ClusterId, ClusterOutcome, Vec<String>)> = self
            .topology
            .clusters
            .par_iter()
            .map(|cluster| {
                let roster = self.allocation.roster(&cluster.id);
                let (outcome, problems) = match strategy {
                    Strategy::Cort => {
                        let seed = mix_seed(seed, served.window.start, cluster.id.as_str());
                        let plan = ClusterPlan::Reactive { alpha, seed };
                        (dispatch_cluster(cluster, roster, served, plan)?, Vec::new())
                    }
                    Strategy::Plver | Strategy::Abr => {
                        let demand = cluster_demand(planned, roster);
                        let schedule = if strategy == Strategy::Plver {
                            plver_schedule(cluster, roster, &demand, alpha, planned.window)?
                        } else {
                            abr_schedule(cluster, roster, &demand, alpha, planned.window)?
                        };
                        let problems = schedule
                            .validate(&demand)
                            .into_iter()
                            .map(|v| format!("{}: {v:?}", cluster.id))
                            .collect();
                        let plan = ClusterPlan::Scheduled(&schedule);
                        (dispatch_cluster(cluster, roster, served, plan)?, problems)
                    }
                };
                Ok((cluster.id.clone(), outcome, problems))
            })
            .collect::<Result<_, SimError>>()?;

        let mut problems = Vec::new();
        let mut outcomes = Vec::with_capacity(parts.len());
        for (id, outcome, p) in parts {
            problems.extend(p);
            outcomes.push((id, outcome));
        }
        let outcome = merge(self.topology, &self.allocation, served, outcomes)?;
        Ok(WindowMetrics::from_outcome(&outcome, strategy, alpha, fluctuation, problems))
    }
}

/// Allocates with the stable allocation and replays up to `windows` windows
/// of `trace` (all of them when `None`).
pub fn run_experiment(
    topology: &Topology,
    trace: &Trace,
    strategy: Strategy,
    alpha: f64,
    windows: Option<usize>,
    seed: u64,
    fluctuation: f64,
) -> Result<Vec<WindowMetrics>, SimError> {
    let allocation = isoa_allocate(&topology.groups, &topology.clusters, &topology.preferences);
    let mut exp = Experiment::new(topology, allocation, trace)?;
    if let Some(n) = windows {
        exp.truncate(n);
    }
    Ok(exp.run(strategy, alpha, fluctuation, seed)?.windows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synthesize_topology, synthesize_trace, TopologyParams, TraceParams};

    fn setup(seed: u64) -> (Topology, Trace) {
        let trace = synthesize_trace(&TraceParams {
            channels: 20,
            windows: 3,
            mean_total_viewers: 800.0,
            seed,
            ..TraceParams::default()
        })
        .unwrap();
        let topo = synthesize_topology(&TopologyParams {
            groups: 30,
            clusters: 10,
            target_demand: 800 * 1300,
            seed,
            ..TopologyParams::default()
        })
        .unwrap();
        (topo, trace)
    }

    #[test]
    fn every_strategy_conserves_traffic_and_respects_capacity() {
        let (topo, trace) = setup(4);
        for strategy in Strategy::ALL {
            for alpha in [0.2, 1.0] {
                let rows = run_experiment(&topo, &trace, strategy, alpha, None, 9, 0.2).unwrap();
                assert_eq!(rows.len(), 3);
                for w in &rows {
                    assert!(w.violations.is_empty(), "{strategy} {alpha}: {:?}", w.violations);
                    assert!((0.0..=1.0).contains(&w.offloading_ratio));
                    let cluster_total: u64 = w.per_cluster.values().map(|t| t.edge_kb).sum();
                    assert_eq!(cluster_total, w.edge_kb);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_rows() {
        let (topo, trace) = setup(5);
        let a = run_experiment(&topo, &trace, Strategy::Cort, 0.6, None, 1, 0.3).unwrap();
        let b = run_experiment(&topo, &trace, Strategy::Cort, 0.6, None, 1, 0.3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn next_window_mode_drops_one_window() {
        let (topo, trace) = setup(6);
        let alloc = isoa_allocate(&topo.groups, &topo.clusters, &topo.preferences);
        let exp = Experiment::new(&topo, alloc, &trace).unwrap().with_mode(DispatchMode::NextWindow);
        let r = exp.run(Strategy::Plver, 0.6, 0.0, 0).unwrap();
        assert_eq!(r.windows.len(), 2);
        assert_eq!(r.windows[0].window_start, trace.windows[1].start);
    }

    #[test]
    fn no_viewers_is_degenerate() {
        let (topo, mut trace) = setup(7);
        for w in &mut trace.windows {
            for r in &mut w.records {
                r.viewers = 0;
            }
        }
        let rows = run_experiment(&topo, &trace, Strategy::Plver, 0.6, Some(1), 0, 0.0).unwrap();
        assert!(rows[0].degenerate);
        assert_eq!(rows[0].offloading_ratio, 1.0);
    }

    #[test]
    fn no_edge_bandwidth_means_no_offloading() {
        let (mut topo, trace) = setup(8);
        for c in &mut topo.clusters {
            for s in &mut c.servers {
                s.bandwidth = 0;
            }
        }
        for strategy in Strategy::ALL {
            let rows = run_experiment(&topo, &trace, strategy, 1.0, Some(1), 0, 0.0).unwrap();
            assert_eq!(rows[0].offloading_ratio, 0.0, "{strategy}");
        }
    }

    #[test]
    fn empty_trace_and_bad_alpha_are_errors() {
        let (topo, mut trace) = setup(9);
        assert!(matches!(
            run_experiment(&topo, &trace, Strategy::Abr, 1.5, None, 0, 0.0),
            Err(SimError::Replication(ReplicationError::Alpha(_)))
        ));
        trace.windows.clear();
        assert!(matches!(
            run_experiment(&topo, &trace, Strategy::Abr, 0.5, None, 0, 0.0),
            Err(SimError::EmptyTrace)
        ));
    }
}
