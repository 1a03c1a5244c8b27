//! Domain types for the edge topology, live channels and per-window viewership.
//!
//! Units used throughout the crate:
//! - bandwidth and bitrates are in Kbps,
//! - cache sizes and traffic volumes are in Kb,
//! - times are in whole seconds.

mod ids;
mod topology;
mod trace;
mod viewers;

pub use ids::{ChannelId, ClusterId, GroupId, ServerId};
pub use topology::{
    level_of, synthesize_topology, TopologyError, TopologyParams, DEFAULT_BANDWIDTH_CLASSES_KBPS,
};
pub use trace::{
    load_trace, parse_trace, synthesize_trace, write_trace, SessionModel, Trace, TraceError,
    TraceParams, TraceRecord, TraceWindow,
};
pub use viewers::{
    apply_fluctuation, build_snapshot, distribute_viewers, largest_remainder,
    largest_remainder_int, uniform_tier_mix, ViewerError,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Quality ladder (240p, 360p, 480p, 720p) in Kbps.
pub const BITRATE_LADDER_KBPS: [u32; 4] = [400, 750, 1000, 2500];

/// Largest ladder tier that does not exceed `bitrate`.
pub fn snap_to_ladder(bitrate: u32) -> Option<u32> {
    BITRATE_LADDER_KBPS.iter().rev().copied().find(|&b| b <= bitrate)
}

pub fn is_ladder_bitrate(bitrate: u32) -> bool {
    BITRATE_LADDER_KBPS.contains(&bitrate)
}

/// A population of viewers sharing ISP and city.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserGroup {
    pub id: GroupId,
    pub isp: String,
    pub city: String,
    pub county: String,
    pub state: String,
    /// Share of a channel's viewers routed to this group.
    pub population_weight: f64,
    /// Aggregate live traffic demand in Kbps.
    pub demand: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeServer {
    pub id: ServerId,
    /// Kbps.
    pub bandwidth: u64,
    /// Kb.
    pub cache: u64,
}

impl EdgeServer {
    /// Cache space usable for proactive replicas under replication-cost factor `alpha`.
    pub fn usable_cache(&self, alpha: f64) -> u64 {
        (self.cache as f64 * alpha).floor() as u64
    }
}

/// Co-located edge servers sharing network attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeCluster {
    pub id: ClusterId,
    pub isp: String,
    pub city: String,
    pub county: String,
    pub state: String,
    pub servers: Vec<EdgeServer>,
}

impl EdgeCluster {
    /// Service capacity: the sum of member server bandwidths.
    pub fn capacity(&self) -> u64 {
        self.servers.iter().map(|s| s.bandwidth).sum()
    }
}

/// Partial, ordered preference lists on both sides (most preferred first).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceTables {
    pub groups: BTreeMap<GroupId, Vec<ClusterId>>,
    pub clusters: BTreeMap<ClusterId, Vec<GroupId>>,
}

impl PreferenceTables {
    pub fn group_list(&self, group: &GroupId) -> &[ClusterId] {
        self.groups.get(group).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn cluster_list(&self, cluster: &ClusterId) -> &[GroupId] {
        self.clusters.get(cluster).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Groups, clusters and both preference tables. This is the topology file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub groups: Vec<UserGroup>,
    pub clusters: Vec<EdgeCluster>,
    pub preferences: PreferenceTables,
}

impl Topology {
    /// Checks referential integrity and the structural invariants of every type.
    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.groups.is_empty() {
            return Err(TopologyError::Invalid("topology has no user groups".into()));
        }
        if self.clusters.is_empty() {
            return Err(TopologyError::Invalid("topology has no edge clusters".into()));
        }
        let mut group_ids = BTreeSet::new();
        for g in &self.groups {
            if !group_ids.insert(&g.id) {
                return Err(TopologyError::Invalid(format!("duplicate group id {}", g.id)));
            }
            if g.population_weight.is_nan() || g.population_weight < 0.0 {
                return Err(TopologyError::Invalid(format!(
                    "group {} has negative population weight",
                    g.id
                )));
            }
        }
        let weight: f64 = self.groups.iter().map(|g| g.population_weight).sum();
        if (weight - 1.0).abs() > 1e-9 {
            return Err(TopologyError::Invalid(format!(
                "population weights sum to {weight}, expected 1"
            )));
        }
        let mut cluster_ids = BTreeSet::new();
        let mut server_ids = BTreeSet::new();
        for c in &self.clusters {
            if !cluster_ids.insert(&c.id) {
                return Err(TopologyError::Invalid(format!("duplicate cluster id {}", c.id)));
            }
            if c.servers.is_empty() {
                return Err(TopologyError::Invalid(format!("cluster {} has no servers", c.id)));
            }
            for s in &c.servers {
                if !server_ids.insert(&s.id) {
                    return Err(TopologyError::Invalid(format!("duplicate server id {}", s.id)));
                }
                if s.bandwidth == 0 || s.cache == 0 {
                    return Err(TopologyError::Invalid(format!(
                        "server {} must have positive bandwidth and cache",
                        s.id
                    )));
                }
            }
        }
        for (g, list) in &self.preferences.groups {
            if !group_ids.contains(g) {
                return Err(TopologyError::Invalid(format!("preferences name unknown group {g}")));
            }
            let mut seen = BTreeSet::new();
            for c in list {
                if !cluster_ids.contains(c) {
                    return Err(TopologyError::Invalid(format!(
                        "group {g} lists unknown cluster {c}"
                    )));
                }
                if !seen.insert(c) {
                    return Err(TopologyError::Invalid(format!("group {g} lists {c} twice")));
                }
            }
        }
        for (c, list) in &self.preferences.clusters {
            if !cluster_ids.contains(c) {
                return Err(TopologyError::Invalid(format!(
                    "preferences name unknown cluster {c}"
                )));
            }
            let mut seen = BTreeSet::new();
            for g in list {
                if !group_ids.contains(g) {
                    return Err(TopologyError::Invalid(format!(
                        "cluster {c} lists unknown group {g}"
                    )));
                }
                if !seen.insert(g) {
                    return Err(TopologyError::Invalid(format!("cluster {c} lists {g} twice")));
                }
            }
        }
        Ok(())
    }

    pub fn cluster(&self, id: &ClusterId) -> Option<&EdgeCluster> {
        self.clusters.iter().find(|c| &c.id == id)
    }

    pub fn group(&self, id: &GroupId) -> Option<&UserGroup> {
        self.groups.iter().find(|g| &g.id == id)
    }

    pub fn total_bandwidth(&self) -> u64 {
        self.clusters.iter().map(EdgeCluster::capacity).sum()
    }

    pub fn total_demand(&self) -> u64 {
        self.groups.iter().map(|g| g.demand).sum()
    }

    /// Replaces every group's demand with the traffic it generates in `snapshot`.
    pub fn set_demands_from(&mut self, snapshot: &ViewershipSnapshot) {
        let per_group = snapshot.demand_by_group();
        for g in &mut self.groups {
            g.demand = per_group.get(&g.id).copied().unwrap_or(0);
        }
    }
}

/// A live channel and its broadcast sessions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub id: ChannelId,
    pub broadcast_bitrate: u32,
    /// Disjoint, ordered `(start, end)` pairs in seconds.
    pub sessions: Vec<(u64, u64)>,
}

/// One bitrate rendition of a channel.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub channel: ChannelId,
    pub bitrate: u32,
}

impl StreamKey {
    pub fn new(channel: impl Into<ChannelId>, bitrate: u32) -> Self {
        Self { channel: channel.into(), bitrate }
    }
}

impl std::fmt::Display for StreamKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}", self.channel, self.bitrate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: u64,
    /// Window length in seconds.
    pub length: u64,
}

impl TimeWindow {
    pub fn new(start: u64, length: u64) -> Self {
        Self { start, length }
    }
}

/// Per-window viewer counts keyed by (group, stream).
///
/// A "viewer" is a unit of demand for one stream at its bitrate, not an
/// individual person.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewershipSnapshot {
    pub window: TimeWindow,
    pub counts: BTreeMap<(GroupId, StreamKey), u64>,
}

impl ViewershipSnapshot {
    pub fn new(window: TimeWindow) -> Self {
        Self { window, counts: BTreeMap::new() }
    }

    pub fn total_viewers(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Viewer totals per channel.
    pub fn channel_totals(&self) -> BTreeMap<ChannelId, u64> {
        let mut out = BTreeMap::new();
        for ((_, stream), n) in &self.counts {
            *out.entry(stream.channel.clone()).or_insert(0) += n;
        }
        out
    }

    /// Kbps demanded by each group.
    pub fn demand_by_group(&self) -> BTreeMap<GroupId, u64> {
        let mut out = BTreeMap::new();
        for ((g, stream), n) in &self.counts {
            *out.entry(g.clone()).or_insert(0) += n * u64::from(stream.bitrate);
        }
        out
    }

    /// Total Kbps demanded.
    pub fn total_demand(&self) -> u64 {
        self.counts.iter().map(|((_, s), n)| n * u64::from(s.bitrate)).sum()
    }
}

/// The segments a stream produces during one window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSet {
    pub stream: StreamKey,
    pub window: TimeWindow,
    /// Kb.
    pub size: u64,
}

impl SegmentSet {
    /// Constant-bitrate sizing: bitrate times window length.
    pub fn new(stream: StreamKey, window: TimeWindow) -> Self {
        let size = u64::from(stream.bitrate) * window.length;
        Self { stream, window, size }
    }

    pub fn size_of(stream: &StreamKey, window: TimeWindow) -> u64 {
        u64::from(stream.bitrate) * window.length
    }
}
