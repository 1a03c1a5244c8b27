//! Shared fixtures for the criterion benchmarks in `benches/`.

use plver_core::model::{
    build_snapshot, synthesize_trace, Trace, TraceParams, TopologyParams, ViewershipSnapshot,
};
use plver_core::replication::{cluster_demand, DemandItem};
use plver_core::simulator::sized_topology;
use plver_core::{isoa_allocate, Allocation, EdgeCluster, GroupId, Topology};

pub struct Fixture {
    pub topology: Topology,
    pub trace: Trace,
    pub allocation: Allocation,
}

/// A synthetic deployment whose server bandwidth matches the trace's demand.
pub fn fixture(groups: usize, clusters: usize, channels: usize, viewers: f64, seed: u64) -> Fixture {
    let trace = synthesize_trace(&TraceParams {
        channels,
        windows: 4,
        mean_total_viewers: viewers,
        seed,
        ..TraceParams::default()
    })
    .expect("valid trace params");
    let base = TopologyParams::default();
    // enough states for one (city, ISP) pair per group
    let per_state = base.counties_per_state * base.cities_per_county * base.isps;
    let params = TopologyParams { groups, clusters, seed, states: base.states.max(groups.div_ceil(per_state)), ..base };
    let topology = sized_topology(&params, &trace).expect("valid topology params");
    let allocation = isoa_allocate(&topology.groups, &topology.clusters, &topology.preferences);
    Fixture { topology, trace, allocation }
}

/// The cluster with the most demand in the first window, with its roster and
/// demand.
pub struct ClusterCase {
    pub cluster: EdgeCluster,
    pub roster: Vec<GroupId>,
    pub demand: Vec<DemandItem>,
    pub snapshot: ViewershipSnapshot,
}

pub fn busiest_cluster(f: &Fixture) -> ClusterCase {
    let snapshot =
        build_snapshot(&f.trace.windows[0], &f.topology.groups, f.trace.window_secs).expect("snapshot");
    let weight = |d: &[DemandItem]| d.iter().map(|i| i.count * u64::from(i.stream.bitrate)).sum::<u64>();
    let (cluster, roster, demand) = f
        .topology
        .clusters
        .iter()
        .map(|c| {
            let roster = f.allocation.roster(&c.id).to_vec();
            let demand = cluster_demand(&snapshot, &roster);
            (c, roster, demand)
        })
        .max_by_key(|(_, _, d)| weight(d))
        .expect("at least one cluster");
    ClusterCase { cluster: cluster.clone(), roster, demand, snapshot }
}

/// Deterministic knapsack items spread over the bitrate ladder.
pub fn mkp_instance(items: usize, bins: usize) -> (Vec<u64>, Vec<u64>) {
    let weights: Vec<u64> = (0..items as u64).map(|i| 400 + (i * 7919) % 2100).collect();
    let total: u64 = weights.iter().sum();
    // room for about two thirds of the items
    let caps = (0..bins as u64).map(|b| total * 2 / 3 / bins as u64 + b * 37).collect();
    (weights, caps)
}
