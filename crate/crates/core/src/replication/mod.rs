//! Per-cluster, per-window replication schedules.

mod abr;
mod mkp;
mod plver;
mod table;

pub use abr::abr_schedule;
pub use mkp::{solve_mkp_exact, solve_mkp_greedy, MkpSolution, EXACT_MAX_BINS, EXACT_MAX_ITEMS};
pub use plver::plver_schedule;
pub use table::{ReplicationTable, TableEntry};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    ClusterId, EdgeCluster, GroupId, SegmentSet, ServerId, StreamKey, TimeWindow,
    ViewershipSnapshot,
};

#[derive(Debug, Error, PartialEq)]
pub enum ReplicationError {
    #[error("alpha must lie in (0, 1], got {0}")]
    Alpha(f64),
    #[error("demand for group {group} which is not allocated to cluster {cluster}")]
    ForeignGroup { group: GroupId, cluster: ClusterId },
    #[error("exact knapsack is limited to {max_items} items and {max_bins} bins, got {items} and {bins}")]
    TooLarge { items: usize, bins: usize, max_items: usize, max_bins: usize },
}

/// Viewers of one stream in one group.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DemandItem {
    pub group: GroupId,
    pub stream: StreamKey,
    pub count: u64,
}

impl DemandItem {
    /// Kbps each viewer of this item consumes.
    pub fn per_viewer_bandwidth(&self) -> u64 {
        u64::from(self.stream.bitrate)
    }
}

/// Demand of the groups in `roster`, one item per non-zero snapshot cell,
/// ordered by (stream, group).
pub fn cluster_demand(snapshot: &ViewershipSnapshot, roster: &[GroupId]) -> Vec<DemandItem> {
    let members: BTreeSet<&GroupId> = roster.iter().collect();
    let mut items: Vec<DemandItem> = snapshot
        .counts
        .iter()
        .filter(|((g, _), &n)| n > 0 && members.contains(g))
        .map(|((g, s), &n)| DemandItem { group: g.clone(), stream: s.clone(), count: n })
        .collect();
    items.sort_by(|a, b| (&a.stream, &a.group).cmp(&(&b.stream, &b.group)));
    items
}

/// Traffic (Kbps) gained by caching a stream of bitrate `bitrate` on a server
/// with `available` Kbps left while `unassigned` of its viewers are unserved.
pub fn reward(bitrate: u64, available: u64, unassigned: u64) -> u64 {
    if bitrate == 0 {
        return 0;
    }
    bitrate * (available / bitrate).min(unassigned)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerPlan {
    pub server: ServerId,
    pub bandwidth: u64,
    /// `floor(alpha * cache)`, Kb.
    pub usable_cache: u64,
    pub cached: BTreeSet<StreamKey>,
    pub residual_bandwidth: u64,
    pub residual_cache: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment {
    pub server: ServerId,
    pub group: GroupId,
    pub stream: StreamKey,
    pub viewers: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSchedule {
    pub cluster: ClusterId,
    pub window: TimeWindow,
    pub alpha: f64,
    /// Servers in ascending id order.
    pub servers: Vec<ServerPlan>,
    /// Sorted by (server, group, stream).
    pub assignments: Vec<Assignment>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleViolation {
    Bandwidth { server: ServerId, used: u64, limit: u64 },
    Cache { server: ServerId, used: u64, limit: u64 },
    NotCached { server: ServerId, stream: StreamKey },
    OverAssigned { group: GroupId, stream: StreamKey, assigned: u64, demanded: u64 },
    Residual { server: ServerId },
    UnknownServer(ServerId),
}

impl ReplicationSchedule {
    /// Kbps of demand the schedule places on edge servers.
    pub fn served_traffic(&self) -> u64 {
        self.assignments.iter().map(|a| a.viewers * u64::from(a.stream.bitrate)).sum()
    }

    pub fn server(&self, id: &ServerId) -> Option<&ServerPlan> {
        self.servers.iter().find(|p| &p.server == id)
    }

    /// Checks every capacity and coupling invariant against `demand`.
    pub fn validate(&self, demand: &[DemandItem]) -> Vec<ScheduleViolation> {
        let mut out = Vec::new();
        let mut used_bw: BTreeMap<&ServerId, u64> = BTreeMap::new();
        let mut per_cell: BTreeMap<(&GroupId, &StreamKey), u64> = BTreeMap::new();
        for a in &self.assignments {
            let Some(plan) = self.server(&a.server) else {
                out.push(ScheduleViolation::UnknownServer(a.server.clone()));
                continue;
            };
            if !plan.cached.contains(&a.stream) {
                out.push(ScheduleViolation::NotCached {
                    server: a.server.clone(),
                    stream: a.stream.clone(),
                });
            }
            *used_bw.entry(&a.server).or_default() += a.viewers * u64::from(a.stream.bitrate);
            *per_cell.entry((&a.group, &a.stream)).or_default() += a.viewers;
        }
        for plan in &self.servers {
            let used = used_bw.get(&plan.server).copied().unwrap_or(0);
            if used > plan.bandwidth {
                out.push(ScheduleViolation::Bandwidth {
                    server: plan.server.clone(),
                    used,
                    limit: plan.bandwidth,
                });
            }
            let cache: u64 =
                plan.cached.iter().map(|s| SegmentSet::size_of(s, self.window)).sum();
            if cache > plan.usable_cache {
                out.push(ScheduleViolation::Cache {
                    server: plan.server.clone(),
                    used: cache,
                    limit: plan.usable_cache,
                });
            }
            if used <= plan.bandwidth
                && cache <= plan.usable_cache
                && (plan.residual_bandwidth != plan.bandwidth - used
                    || plan.residual_cache != plan.usable_cache - cache)
            {
                out.push(ScheduleViolation::Residual { server: plan.server.clone() });
            }
        }
        let demanded: BTreeMap<(&GroupId, &StreamKey), u64> =
            demand.iter().fold(BTreeMap::new(), |mut m, d| {
                *m.entry((&d.group, &d.stream)).or_default() += d.count;
                m
            });
        for ((g, s), assigned) in per_cell {
            let want = demanded.get(&(g, s)).copied().unwrap_or(0);
            if assigned > want {
                out.push(ScheduleViolation::OverAssigned {
                    group: g.clone(),
                    stream: s.clone(),
                    assigned,
                    demanded: want,
                });
            }
        }
        out
    }
}

/// Mutable scheduling state shared by the strategies.
pub(crate) struct Workspace<'a> {
    pub window: TimeWindow,
    pub alpha: f64,
    pub cluster: &'a ClusterId,
    /// Server ids in ascending order.
    pub server_ids: Vec<ServerId>,
    pub plans: Vec<ServerPlan>,
    /// Demand items ordered by (stream, group).
    pub items: Vec<DemandItem>,
    pub remaining: Vec<u64>,
    /// (server index, item index) -> viewers.
    pub assigned: BTreeMap<(usize, usize), u64>,
}

impl<'a> Workspace<'a> {
    pub fn new(
        cluster: &'a EdgeCluster,
        roster: &[GroupId],
        demand: &[DemandItem],
        alpha: f64,
        window: TimeWindow,
    ) -> Result<Self, ReplicationError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(ReplicationError::Alpha(alpha));
        }
        let members: BTreeSet<&GroupId> = roster.iter().collect();
        let mut merged: BTreeMap<(StreamKey, GroupId), u64> = BTreeMap::new();
        for d in demand {
            if !members.contains(&d.group) {
                return Err(ReplicationError::ForeignGroup {
                    group: d.group.clone(),
                    cluster: cluster.id.clone(),
                });
            }
            if d.count > 0 {
                *merged.entry((d.stream.clone(), d.group.clone())).or_default() += d.count;
            }
        }
        let items: Vec<DemandItem> = merged
            .into_iter()
            .map(|((stream, group), count)| DemandItem { group, stream, count })
            .collect();
        let mut servers: Vec<_> = cluster.servers.iter().collect();
        servers.sort_by(|a, b| a.id.cmp(&b.id));
        let plans = servers
            .iter()
            .map(|s| {
                let usable = s.usable_cache(alpha);
                ServerPlan {
                    server: s.id.clone(),
                    bandwidth: s.bandwidth,
                    usable_cache: usable,
                    cached: BTreeSet::new(),
                    residual_bandwidth: s.bandwidth,
                    residual_cache: usable,
                }
            })
            .collect();
        Ok(Self {
            window,
            alpha,
            cluster: &cluster.id,
            server_ids: servers.iter().map(|s| s.id.clone()).collect(),
            plans,
            remaining: items.iter().map(|d| d.count).collect(),
            items,
            assigned: BTreeMap::new(),
        })
    }

    pub fn segment_size(&self, stream: &StreamKey) -> u64 {
        SegmentSet::size_of(stream, self.window)
    }

    /// Unassigned viewers of `stream` across the cluster.
    pub fn unassigned(&self, stream: &StreamKey) -> u64 {
        self.items_of(stream).map(|k| self.remaining[k]).sum()
    }

    pub fn items_of<'s>(&'s self, stream: &'s StreamKey) -> impl Iterator<Item = usize> + 's {
        let start = self.items.partition_point(|d| &d.stream < stream);
        (start..self.items.len()).take_while(move |&k| &self.items[k].stream == stream)
    }

    /// Distinct streams with unassigned viewers, in id order.
    pub fn pending_streams(&self) -> Vec<StreamKey> {
        let mut out: Vec<StreamKey> = Vec::new();
        for (k, d) in self.items.iter().enumerate() {
            if self.remaining[k] > 0 && out.last() != Some(&d.stream) {
                out.push(d.stream.clone());
            }
        }
        out
    }

    pub fn cache(&mut self, server: usize, stream: &StreamKey) {
        let size = self.segment_size(stream);
        let plan = &mut self.plans[server];
        debug_assert!(size <= plan.residual_cache);
        plan.residual_cache -= size;
        plan.cached.insert(stream.clone());
    }

    /// Moves `viewers` of item `k` onto `server`, charging its bandwidth.
    pub fn assign(&mut self, server: usize, k: usize, viewers: u64) {
        if viewers == 0 {
            return;
        }
        let bw = viewers * self.items[k].per_viewer_bandwidth();
        debug_assert!(viewers <= self.remaining[k]);
        debug_assert!(bw <= self.plans[server].residual_bandwidth);
        self.remaining[k] -= viewers;
        self.plans[server].residual_bandwidth -= bw;
        *self.assigned.entry((server, k)).or_default() += viewers;
    }

    /// Assigns leftover viewers to servers that already cache their stream,
    /// scanning items in (stream, group) order and servers in id order.
    pub fn redirect_to_cached(&mut self) {
        for k in 0..self.items.len() {
            for j in 0..self.plans.len() {
                if self.remaining[k] == 0 {
                    break;
                }
                if !self.plans[j].cached.contains(&self.items[k].stream) {
                    continue;
                }
                let b = self.items[k].per_viewer_bandwidth();
                let fit = (self.plans[j].residual_bandwidth / b).min(self.remaining[k]);
                self.assign(j, k, fit);
            }
        }
    }

    pub fn finish(self) -> ReplicationSchedule {
        let mut assignments: Vec<Assignment> = self
            .assigned
            .iter()
            .map(|(&(j, k), &viewers)| Assignment {
                server: self.server_ids[j].clone(),
                group: self.items[k].group.clone(),
                stream: self.items[k].stream.clone(),
                viewers,
            })
            .collect();
        assignments.sort();
        ReplicationSchedule {
            cluster: self.cluster.clone(),
            window: self.window,
            alpha: self.alpha,
            servers: self.plans,
            assignments,
        }
    }
}
