//! Window-by-window replay: schedule, dispatch, measure.

mod dispatch;
mod experiment;
mod output;

pub use dispatch::{dispatch_cluster, dispatch_window, ClusterOutcome, ClusterPlan};
pub use experiment::{run_experiment, DispatchMode, Experiment, RunResult};
pub use output::{mean_offloading, write_cluster_csv, write_metrics_csv, METRICS_HEADER};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::AllocationError;
use crate::model::{
    build_snapshot, synthesize_topology, ClusterId, GroupId, ServerId, StreamKey, TimeWindow, Topology,
    TopologyError, TopologyParams, Trace, ViewerError,
};
use crate::replication::ReplicationError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("trace has no windows")]
    EmptyTrace,
    #[error("unknown strategy {0:?} (expected plver, abr or cort)")]
    UnknownStrategy(String),
    #[error("schedule covers {schedule}s windows but the snapshot covers {snapshot}s")]
    WindowMismatch { schedule: u64, snapshot: u64 },
    #[error("snapshot references group {0} which is not in the topology")]
    UnknownGroup(GroupId),
    #[error(transparent)]
    Replication(#[from] ReplicationError),
    #[error(transparent)]
    Viewers(#[from] ViewerError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Plver,
    Abr,
    Cort,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Plver, Strategy::Abr, Strategy::Cort];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Plver => "plver",
            Strategy::Abr => "abr",
            Strategy::Cort => "cort",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "plver" => Ok(Strategy::Plver),
            "abr" => Ok(Strategy::Abr),
            "cort" => Ok(Strategy::Cort),
            _ => Err(SimError::UnknownStrategy(s.to_string())),
        }
    }
}

/// Synthesizes a topology whose total edge bandwidth covers the mean
/// per-window demand `trace` generates over its groups. `target_demand` in
/// `params` is ignored.
///
/// Group locations and weights are drawn before any server, so the second
/// synthesis sees the same groups as the first.
pub fn sized_topology(params: &TopologyParams, trace: &Trace) -> Result<Topology, SimError> {
    if trace.windows.is_empty() {
        return Err(SimError::EmptyTrace);
    }
    let probe = synthesize_topology(&TopologyParams { target_demand: 1, ..params.clone() })?;
    let mut total = 0u64;
    for w in &trace.windows {
        total += build_snapshot(w, &probe.groups, trace.window_secs)?.total_demand();
    }
    let mean = (total / trace.windows.len() as u64).max(1);
    Ok(synthesize_topology(&TopologyParams { target_demand: mean, ..params.clone() })?)
}

/// Viewers of one (group, stream) cell and where they were served.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CellOutcome {
    pub demanded: u64,
    pub edge: u64,
    pub origin: u64,
    pub servers: Vec<ServerId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServerUsage {
    pub bandwidth: u64,
    pub consumed: u64,
    pub usable_cache: u64,
    pub cached_kb: u64,
}

/// Traffic volumes in Kb.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traffic {
    pub edge_kb: u64,
    pub total_kb: u64,
}

impl Traffic {
    pub fn origin_kb(&self) -> u64 {
        self.total_kb - self.edge_kb
    }

    pub fn add(&mut self, other: Traffic) {
        self.edge_kb += other.edge_kb;
        self.total_kb += other.total_kb;
    }

    /// Edge share of the traffic; 1.0 when there is none.
    pub fn ratio(&self) -> f64 {
        if self.total_kb == 0 {
            1.0
        } else {
            self.edge_kb as f64 / self.total_kb as f64
        }
    }
}

/// Result of serving one window's requests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DispatchOutcome {
    pub window: TimeWindow,
    pub cells: BTreeMap<(GroupId, StreamKey), CellOutcome>,
    pub servers: BTreeMap<ServerId, ServerUsage>,
    pub per_cluster: BTreeMap<ClusterId, Traffic>,
}

impl DispatchOutcome {
    pub fn traffic(&self) -> Traffic {
        let mut t = Traffic::default();
        for ((_, stream), cell) in &self.cells {
            let per_viewer = u64::from(stream.bitrate) * self.window.length;
            t.edge_kb += cell.edge * per_viewer;
            t.total_kb += cell.demanded * per_viewer;
        }
        t
    }

    /// Conservation and capacity problems, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for ((g, s), cell) in &self.cells {
            if cell.edge + cell.origin != cell.demanded {
                out.push(format!(
                    "{g}/{s}: edge {} + origin {} != demand {}",
                    cell.edge, cell.origin, cell.demanded
                ));
            }
        }
        for (id, u) in &self.servers {
            if u.consumed > u.bandwidth {
                out.push(format!("{id}: bandwidth {} > {}", u.consumed, u.bandwidth));
            }
            if u.cached_kb > u.usable_cache {
                out.push(format!("{id}: cache {} > {}", u.cached_kb, u.usable_cache));
            }
        }
        out
    }
}

/// Edge share of an outcome's traffic; 1.0 when nothing was requested.
pub fn offloading_ratio(outcome: &DispatchOutcome) -> f64 {
    outcome.traffic().ratio()
}

/// Share of viewers served at the edge per ladder tier; tiers nobody watched
/// are absent.
pub fn satisfaction_by_bitrate(outcome: &DispatchOutcome) -> BTreeMap<u32, f64> {
    let mut tiers: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    for ((_, stream), cell) in &outcome.cells {
        let e = tiers.entry(stream.bitrate).or_default();
        e.0 += cell.edge;
        e.1 += cell.demanded;
    }
    tiers
        .into_iter()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(b, (edge, n))| (b, edge as f64 / n as f64))
        .collect()
}

/// Everything measured for one (strategy, alpha, fluctuation, window).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMetrics {
    pub window_start: u64,
    pub strategy: Strategy,
    pub alpha: f64,
    pub fluctuation: f64,
    pub offloading_ratio: f64,
    /// No traffic at all; the ratio is 1.0 by convention.
    pub degenerate: bool,
    pub satisfaction: BTreeMap<u32, f64>,
    pub per_cluster: BTreeMap<ClusterId, Traffic>,
    pub edge_kb: u64,
    pub origin_kb: u64,
    /// Schedule and dispatch invariant breaches found in this window.
    pub violations: Vec<String>,
}

impl WindowMetrics {
    pub fn from_outcome(
        outcome: &DispatchOutcome,
        strategy: Strategy,
        alpha: f64,
        fluctuation: f64,
        mut violations: Vec<String>,
    ) -> Self {
        let traffic = outcome.traffic();
        violations.extend(outcome.violations());
        Self {
            window_start: outcome.window.start,
            strategy,
            alpha,
            fluctuation,
            offloading_ratio: traffic.ratio(),
            degenerate: traffic.total_kb == 0,
            satisfaction: satisfaction_by_bitrate(outcome),
            per_cluster: outcome.per_cluster.clone(),
            edge_kb: traffic.edge_kb,
            origin_kb: traffic.origin_kb(),
            violations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(cells: &[(&str, u32, u64, u64)]) -> DispatchOutcome {
        DispatchOutcome {
            window: TimeWindow::new(0, 10),
            cells: cells
                .iter()
                .map(|&(g, b, edge, origin)| {
                    (
                        (GroupId::from(g), StreamKey::new("ch", b)),
                        CellOutcome { demanded: edge + origin, edge, origin, servers: vec![] },
                    )
                })
                .collect(),
            servers: BTreeMap::new(),
            per_cluster: BTreeMap::new(),
        }
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(Traffic { edge_kb: 75_000, total_kb: 100_000 }.ratio(), 0.75);
        assert_eq!(Traffic { edge_kb: 0, total_kb: 5 }.ratio(), 0.0);
        assert_eq!(offloading_ratio(&outcome(&[])), 1.0);
        assert_eq!(offloading_ratio(&outcome(&[("g", 1000, 3, 1)])), 0.75);
    }

    #[test]
    fn satisfaction_per_tier() {
        let o = outcome(&[("g", 2500, 0, 4), ("g", 400, 3, 1), ("h", 400, 1, 3)]);
        let s = satisfaction_by_bitrate(&o);
        assert_eq!(s.get(&2500), Some(&0.0));
        assert_eq!(s.get(&400), Some(&0.5));
        assert!(!s.contains_key(&750));
    }

    #[test]
    fn violations_catch_leaks_and_overuse() {
        let mut o = outcome(&[("g", 400, 3, 1)]);
        assert!(o.violations().is_empty());
        o.cells.values_mut().next().unwrap().origin = 0;
        o.servers.insert(
            "s".into(),
            ServerUsage { bandwidth: 10, consumed: 11, usable_cache: 5, cached_kb: 6 },
        );
        assert_eq!(o.violations().len(), 3);
    }

    #[test]
    fn sized_topology_matches_trace_demand() {
        use crate::model::{synthesize_trace, TraceParams};
        let trace = synthesize_trace(&TraceParams { channels: 10, windows: 2, seed: 3, ..TraceParams::default() })
            .unwrap();
        let params = TopologyParams { groups: 20, clusters: 8, seed: 3, ..TopologyParams::default() };
        let topo = sized_topology(&params, &trace).unwrap();
        let snaps: Vec<u64> = trace
            .windows
            .iter()
            .map(|w| build_snapshot(w, &topo.groups, 300).unwrap().total_demand())
            .collect();
        let mean = snaps.iter().sum::<u64>() / 2;
        assert_eq!(topo.total_demand(), mean);
        assert!(topo.total_bandwidth() >= mean);
        assert!(topo.total_bandwidth() < mean + 80_000);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!(matches!("lru".parse::<Strategy>(), Err(SimError::UnknownStrategy(_))));
    }
}
