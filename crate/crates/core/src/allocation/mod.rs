//! One-to-multiple allocation of user groups to capacitated edge clusters.
//!
//! Every group is served by at most one cluster; a cluster serves any set of
//! groups whose total demand fits its capacity. [`isoa_allocate`] runs
//! group-proposing deferred acceptance with integral demands, [`greedy_allocate`]
//! is the first-fit baseline and [`is_stable`] looks for blocking pairs.

mod greedy;
mod isoa;
mod stability;

pub use greedy::greedy_allocate;
pub use isoa::{bsearch_violation_start, isoa_allocate, isoa_allocate_with, EvictionRule, IsoaStats};
pub use stability::{is_stable, StabilityVerdict};

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ClusterId, EdgeCluster, GroupId, PreferenceTables, UserGroup};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AllocationError {
    #[error("roster demand already fits capacity; nothing to evict")]
    RosterFeasible,
    #[error("proposer position {0} is outside the roster")]
    ProposerNotInRoster(usize),
    #[error("roster prefix ahead of the proposer already exceeds capacity")]
    PrefixInfeasible,
    #[error("cluster {cluster} carries {load} Kbps over capacity {capacity}")]
    Infeasible { cluster: ClusterId, load: u64, capacity: u64 },
    #[error("allocation references unknown {0}")]
    Unknown(String),
    #[error("group {group} is assigned to cluster {cluster} but no preference level applies")]
    NoLevel { group: GroupId, cluster: ClusterId },
}

/// Result of an allocation run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub assigned: BTreeMap<GroupId, ClusterId>,
    /// Every cluster's groups, ordered by that cluster's preference list.
    pub rosters: BTreeMap<ClusterId, Vec<GroupId>>,
    /// Groups left without a cluster, in input order.
    pub unallocated: Vec<GroupId>,
}

impl Allocation {
    pub fn cluster_of(&self, group: &GroupId) -> Option<&ClusterId> {
        self.assigned.get(group)
    }

    pub fn roster(&self, cluster: &ClusterId) -> &[GroupId] {
        self.rosters.get(cluster).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Verifies that every roster fits its cluster and that rosters and
    /// `assigned` agree.
    pub fn check_feasible(
        &self,
        groups: &[UserGroup],
        clusters: &[EdgeCluster],
    ) -> Result<(), AllocationError> {
        let demand: HashMap<&GroupId, u64> = groups.iter().map(|g| (&g.id, g.demand)).collect();
        let mut seen = 0usize;
        for (cid, roster) in &self.rosters {
            let cluster = clusters
                .iter()
                .find(|c| &c.id == cid)
                .ok_or_else(|| AllocationError::Unknown(format!("cluster {cid}")))?;
            let mut load = 0u64;
            for g in roster {
                load += demand
                    .get(g)
                    .ok_or_else(|| AllocationError::Unknown(format!("group {g}")))?;
                if self.assigned.get(g) != Some(cid) {
                    return Err(AllocationError::Unknown(format!(
                        "group {g} in roster of {cid} but assigned elsewhere"
                    )));
                }
                seen += 1;
            }
            if load > cluster.capacity() {
                return Err(AllocationError::Infeasible {
                    cluster: cid.clone(),
                    load,
                    capacity: cluster.capacity(),
                });
            }
        }
        if seen != self.assigned.len() {
            return Err(AllocationError::Unknown("assigned group missing from rosters".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("allocation serializes")
    }
}

/// Number of groups at each preference level (1..=6) of their assigned cluster.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankHistogram {
    pub counts: [u64; 6],
    pub unallocated: u64,
}

impl RankHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.unallocated
    }

    /// Row labels: `1`..`6` then `unallocated`.
    pub fn rows(&self) -> Vec<(String, u64)> {
        let mut rows: Vec<(String, u64)> =
            self.counts.iter().enumerate().map(|(i, n)| ((i + 1).to_string(), *n)).collect();
        rows.push(("unallocated".into(), self.unallocated));
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,count\n");
        for (label, n) in self.rows() {
            out.push_str(&format!("{label},{n}\n"));
        }
        out
    }
}

/// Buckets every group by `level_of(group, assigned cluster)`.
pub fn preference_rank_histogram(
    allocation: &Allocation,
    groups: &[UserGroup],
    clusters: &[EdgeCluster],
    level_of: impl Fn(&UserGroup, &EdgeCluster) -> Option<u8>,
) -> Result<RankHistogram, AllocationError> {
    let by_id: HashMap<&ClusterId, &EdgeCluster> = clusters.iter().map(|c| (&c.id, c)).collect();
    let mut hist = RankHistogram::default();
    for g in groups {
        match allocation.assigned.get(&g.id) {
            None => hist.unallocated += 1,
            Some(cid) => {
                let c = by_id
                    .get(cid)
                    .ok_or_else(|| AllocationError::Unknown(format!("cluster {cid}")))?;
                match level_of(g, c) {
                    Some(l @ 1..=6) => hist.counts[usize::from(l) - 1] += 1,
                    _ => {
                        return Err(AllocationError::NoLevel {
                            group: g.id.clone(),
                            cluster: cid.clone(),
                        })
                    }
                }
            }
        }
    }
    Ok(hist)
}

/// A level function that ranks a cluster by its 1-based position in the
/// group's own preference list (positions past 6 have no level).
pub fn list_position_level(
    prefs: &PreferenceTables,
) -> impl Fn(&UserGroup, &EdgeCluster) -> Option<u8> + '_ {
    move |g, c| {
        prefs
            .group_list(&g.id)
            .iter()
            .position(|x| x == &c.id)
            .filter(|&p| p < 6)
            .map(|p| p as u8 + 1)
    }
}

/// Index-based view of an allocation instance shared by the algorithms.
pub(crate) struct Instance {
    pub demand: Vec<u64>,
    pub capacity: Vec<u64>,
    /// Group preference lists as cluster indices.
    pub group_prefs: Vec<Vec<usize>>,
    /// Per cluster: group index -> rank in the cluster's list.
    pub cluster_rank: Vec<HashMap<usize, usize>>,
}

impl Instance {
    pub fn new(groups: &[UserGroup], clusters: &[EdgeCluster], prefs: &PreferenceTables) -> Self {
        let gidx: HashMap<&GroupId, usize> =
            groups.iter().enumerate().map(|(i, g)| (&g.id, i)).collect();
        let cidx: HashMap<&ClusterId, usize> =
            clusters.iter().enumerate().map(|(i, c)| (&c.id, i)).collect();
        let group_prefs = groups
            .iter()
            .map(|g| prefs.group_list(&g.id).iter().filter_map(|c| cidx.get(c).copied()).collect())
            .collect();
        let cluster_rank = clusters
            .iter()
            .map(|c| {
                prefs
                    .cluster_list(&c.id)
                    .iter()
                    .filter_map(|g| gidx.get(g).copied())
                    .enumerate()
                    .map(|(rank, g)| (g, rank))
                    .collect()
            })
            .collect();
        Self {
            demand: groups.iter().map(|g| g.demand).collect(),
            capacity: clusters.iter().map(EdgeCluster::capacity).collect(),
            group_prefs,
            cluster_rank,
        }
    }

    pub fn free_queue(&self) -> VecDeque<usize> {
        (0..self.demand.len()).collect()
    }
}

/// Converts index rosters back into an [`Allocation`].
pub(crate) fn assemble(
    groups: &[UserGroup],
    clusters: &[EdgeCluster],
    rosters: &[Vec<usize>],
) -> Allocation {
    let mut out = Allocation::default();
    for (j, roster) in rosters.iter().enumerate() {
        let cid = &clusters[j].id;
        for &g in roster {
            out.assigned.insert(groups[g].id.clone(), cid.clone());
        }
        out.rosters.insert(cid.clone(), roster.iter().map(|&g| groups[g].id.clone()).collect());
    }
    out.unallocated =
        groups.iter().filter(|g| !out.assigned.contains_key(&g.id)).map(|g| g.id.clone()).collect();
    out
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::model::EdgeServer;

    pub fn group(id: &str, demand: u64) -> UserGroup {
        UserGroup {
            id: id.into(),
            isp: "isp".into(),
            city: "city".into(),
            county: "county".into(),
            state: "state".into(),
            population_weight: 0.0,
            demand,
        }
    }

    pub fn cluster(id: &str, capacity: u64) -> EdgeCluster {
        EdgeCluster {
            id: id.into(),
            isp: "isp".into(),
            city: "city".into(),
            county: "county".into(),
            state: "state".into(),
            servers: vec![EdgeServer {
                id: format!("{id}-s1").into(),
                bandwidth: capacity,
                cache: 1,
            }],
        }
    }

    pub fn prefs(groups: &[(&str, &[&str])], clusters: &[(&str, &[&str])]) -> PreferenceTables {
        PreferenceTables {
            groups: groups
                .iter()
                .map(|(g, l)| (GroupId::from(*g), l.iter().map(|c| ClusterId::from(*c)).collect()))
                .collect(),
            clusters: clusters
                .iter()
                .map(|(c, l)| (ClusterId::from(*c), l.iter().map(|g| GroupId::from(*g)).collect()))
                .collect(),
        }
    }

    /// Allocation from explicit `(group, cluster)` pairs; rosters follow the
    /// cluster lists.
    pub fn from_pairs(pairs: &[(GroupId, ClusterId)], groups: &[UserGroup], prefs: &PreferenceTables) -> Allocation {
        let mut a = Allocation::default();
        for (g, c) in pairs {
            a.assigned.insert(g.clone(), c.clone());
        }
        for (c, order) in &prefs.clusters {
            let roster: Vec<GroupId> =
                order.iter().filter(|g| a.assigned.get(*g) == Some(c)).cloned().collect();
            a.rosters.insert(c.clone(), roster);
        }
        a.unallocated = groups
            .iter()
            .filter(|g| !a.assigned.contains_key(&g.id))
            .map(|g| g.id.clone())
            .collect();
        a
    }

    /// Every stable allocation, by enumerating all (clusters + 1)^groups
    /// assignments that pair mutually listed partners.
    pub fn stable_allocations(
        groups: &[UserGroup],
        clusters: &[EdgeCluster],
        prefs: &PreferenceTables,
    ) -> Vec<Allocation> {
        let m = clusters.len() + 1;
        let total = m.pow(groups.len() as u32);
        let mut out = Vec::new();
        'next: for code in 0..total {
            let mut pairs = Vec::new();
            let mut c = code;
            for g in groups {
                let pick = c % m;
                c /= m;
                if pick == 0 {
                    continue;
                }
                let cid = &clusters[pick - 1].id;
                if !prefs.group_list(&g.id).contains(cid) || !prefs.cluster_list(cid).contains(&g.id) {
                    continue 'next;
                }
                pairs.push((g.id.clone(), cid.clone()));
            }
            let a = from_pairs(&pairs, groups, prefs);
            if matches!(super::is_stable(&a, groups, clusters, prefs), Ok(v) if v.stable) {
                out.push(a);
            }
        }
        out
    }

    /// Two clusters (capacities 15 and 10), four groups (demands 3, 5, 6, 6).
    /// Heads of the group lists and the c2 ranking of g3 over g2 are fixed by
    /// the worked example; the remaining tails are filled in consistently.
    pub fn four_by_two() -> (Vec<UserGroup>, Vec<EdgeCluster>, PreferenceTables) {
        let groups = vec![group("g1", 3), group("g2", 5), group("g3", 6), group("g4", 6)];
        let clusters = vec![cluster("c1", 15), cluster("c2", 10)];
        let prefs = prefs(
            &[
                ("g1", &["c1", "c2"]),
                ("g2", &["c2", "c1"]),
                ("g3", &["c2", "c1"]),
                ("g4", &["c1", "c2"]),
            ],
            &[("c1", &["g1", "g2", "g3", "g4"]), ("c2", &["g3", "g2", "g1", "g4"])],
        );
        (groups, clusters, prefs)
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn histogram_on_the_worked_example() {
        let (groups, clusters, prefs) = four_by_two();
        let alloc = isoa_allocate(&groups, &clusters, &prefs);
        let hist =
            preference_rank_histogram(&alloc, &groups, &clusters, list_position_level(&prefs))
                .unwrap();
        assert_eq!(hist.counts, [3, 1, 0, 0, 0, 0]);
        assert_eq!(hist.unallocated, 0);
        assert_eq!(hist.total(), 4);
    }

    #[test]
    fn empty_allocation_is_all_unallocated() {
        let (groups, clusters, _) = four_by_two();
        let hist = preference_rank_histogram(&Allocation::default(), &groups, &clusters, |_, _| {
            Some(1)
        })
        .unwrap();
        assert_eq!(hist.unallocated, 4);
        assert_eq!(hist.counts, [0; 6]);
    }

    #[test]
    fn assigned_pair_without_level_is_an_error() {
        let (groups, clusters, prefs) = four_by_two();
        let alloc = isoa_allocate(&groups, &clusters, &prefs);
        let err = preference_rank_histogram(&alloc, &groups, &clusters, |_, _| None).unwrap_err();
        assert!(matches!(err, AllocationError::NoLevel { .. }));
    }

    #[test]
    fn csv_lists_every_level() {
        let h = RankHistogram { counts: [1, 2, 3, 4, 5, 6], unallocated: 7 };
        assert_eq!(h.to_csv(), "level,count\n1,1\n2,2\n3,3\n4,4\n5,5\n6,6\nunallocated,7\n");
    }

    #[test]
    fn allocation_json_has_the_three_sections() {
        let (groups, clusters, prefs) = four_by_two();
        let v: serde_json::Value =
            serde_json::from_str(&isoa_allocate(&groups, &clusters, &prefs).to_json()).unwrap();
        for key in ["assigned", "rosters", "unallocated"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
