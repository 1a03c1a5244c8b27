//! Serving one window's requests against cached content.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CellOutcome, DispatchOutcome, ServerUsage, SimError, Strategy, Traffic};
use crate::allocation::Allocation;
use crate::model::{
    ClusterId, EdgeCluster, GroupId, SegmentSet, ServerId, StreamKey, Topology, ViewershipSnapshot,
};
use crate::replication::ReplicationSchedule;

/// One cluster's share of a [`DispatchOutcome`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClusterOutcome {
    pub cells: BTreeMap<(GroupId, StreamKey), CellOutcome>,
    pub servers: BTreeMap<ServerId, ServerUsage>,
}

impl ClusterOutcome {
    pub fn traffic(&self, window_len: u64) -> Traffic {
        let mut t = Traffic::default();
        for ((_, s), cell) in &self.cells {
            let kb = u64::from(s.bitrate) * window_len;
            t.edge_kb += cell.edge * kb;
            t.total_kb += cell.demanded * kb;
        }
        t
    }
}

/// How a cluster's servers obtain content during the window.
#[derive(Debug, Clone, Copy)]
pub enum ClusterPlan<'a> {
    /// Content was replicated ahead of time per the schedule.
    Scheduled(&'a ReplicationSchedule),
    /// Nothing is cached up front; a miss installs the stream on the server
    /// with the most spare bandwidth if its usable cache allows.
    Reactive { alpha: f64, seed: u64 },
}

/// Serves the roster's requests in `snapshot` on one cluster.
///
/// With a schedule, each cell is first served by the servers the schedule
/// assigned it to, then by any caching server in id order. Whatever cannot be
/// served goes to the origin.
pub fn dispatch_cluster(
    cluster: &EdgeCluster,
    roster: &[GroupId],
    snapshot: &ViewershipSnapshot,
    plan: ClusterPlan,
) -> Result<ClusterOutcome, SimError> {
    let members: BTreeSet<&GroupId> = roster.iter().collect();
    let mut cells: BTreeMap<(GroupId, StreamKey), CellOutcome> = snapshot
        .counts
        .iter()
        .filter(|((g, _), &n)| n > 0 && members.contains(g))
        .map(|(key, &n)| (key.clone(), CellOutcome { demanded: n, ..CellOutcome::default() }))
        .collect();
    let mut servers: Vec<&crate::model::EdgeServer> = cluster.servers.iter().collect();
    servers.sort_by(|a, b| a.id.cmp(&b.id));
    let window = snapshot.window;

    let usage = match plan {
        ClusterPlan::Scheduled(schedule) => {
            if schedule.window.length != window.length {
                return Err(SimError::WindowMismatch {
                    schedule: schedule.window.length,
                    snapshot: window.length,
                });
            }
            serve_scheduled(&servers, schedule, &mut cells, window.length)
        }
        ClusterPlan::Reactive { alpha, seed } => {
            serve_reactive(&servers, alpha, seed, &mut cells, window)
        }
    };
    for cell in cells.values_mut() {
        cell.origin = cell.demanded - cell.edge;
    }
    Ok(ClusterOutcome { cells, servers: usage })
}

struct Live {
    bandwidth: u64,
    residual: u64,
    usable_cache: u64,
    residual_cache: u64,
    cached: BTreeSet<StreamKey>,
}

fn serve(cell: &mut CellOutcome, server: &ServerId, live: &mut Live, bitrate: u64, cap: u64) {
    let n = (cell.demanded - cell.edge).min(live.residual / bitrate).min(cap);
    if n == 0 {
        return;
    }
    cell.edge += n;
    live.residual -= n * bitrate;
    if !cell.servers.contains(server) {
        cell.servers.push(server.clone());
    }
}

fn usage_of(ids: &[&ServerId], live: &[Live]) -> BTreeMap<ServerId, ServerUsage> {
    ids.iter()
        .zip(live)
        .map(|(id, l)| {
            (
                (*id).clone(),
                ServerUsage {
                    bandwidth: l.bandwidth,
                    consumed: l.bandwidth - l.residual,
                    usable_cache: l.usable_cache,
                    cached_kb: l.usable_cache - l.residual_cache,
                },
            )
        })
        .collect()
}

fn serve_scheduled(
    servers: &[&crate::model::EdgeServer],
    schedule: &ReplicationSchedule,
    cells: &mut BTreeMap<(GroupId, StreamKey), CellOutcome>,
    window_len: u64,
) -> BTreeMap<ServerId, ServerUsage> {
    let ids: Vec<&ServerId> = servers.iter().map(|s| &s.id).collect();
    let mut live: Vec<Live> = servers
        .iter()
        .map(|s| {
            let plan = schedule.server(&s.id);
            let cached = plan.map(|p| p.cached.clone()).unwrap_or_default();
            let usable = plan.map_or(0, |p| p.usable_cache);
            let used: u64 = cached.iter().map(|c| u64::from(c.bitrate) * window_len).sum();
            Live {
                bandwidth: s.bandwidth,
                residual: s.bandwidth,
                usable_cache: usable,
                residual_cache: usable.saturating_sub(used),
                cached,
            }
        })
        .collect();
    // a cache overrun in the schedule must still show up as a violation
    let overrun: Vec<u64> = live
        .iter()
        .map(|l| {
            let used: u64 = l.cached.iter().map(|c| u64::from(c.bitrate) * window_len).sum();
            used.saturating_sub(l.usable_cache)
        })
        .collect();

    for a in &schedule.assignments {
        let Some(j) = ids.iter().position(|id| **id == a.server) else { continue };
        if !live[j].cached.contains(&a.stream) {
            continue;
        }
        if let Some(cell) = cells.get_mut(&(a.group.clone(), a.stream.clone())) {
            serve(cell, &a.server, &mut live[j], u64::from(a.stream.bitrate), a.viewers);
        }
    }
    for ((_, stream), cell) in cells.iter_mut() {
        for (j, id) in ids.iter().enumerate() {
            if cell.edge == cell.demanded {
                break;
            }
            if live[j].cached.contains(stream) {
                serve(cell, id, &mut live[j], u64::from(stream.bitrate), u64::MAX);
            }
        }
    }
    let mut usage = usage_of(&ids, &live);
    for (id, extra) in ids.iter().zip(overrun) {
        usage.get_mut(*id).expect("listed").cached_kb += extra;
    }
    usage
}

fn serve_reactive(
    servers: &[&crate::model::EdgeServer],
    alpha: f64,
    seed: u64,
    cells: &mut BTreeMap<(GroupId, StreamKey), CellOutcome>,
    window: crate::model::TimeWindow,
) -> BTreeMap<ServerId, ServerUsage> {
    let ids: Vec<&ServerId> = servers.iter().map(|s| &s.id).collect();
    let mut live: Vec<Live> = servers
        .iter()
        .map(|s| {
            let usable = s.usable_cache(alpha);
            Live {
                bandwidth: s.bandwidth,
                residual: s.bandwidth,
                usable_cache: usable,
                residual_cache: usable,
                cached: BTreeSet::new(),
            }
        })
        .collect();

    let keys: Vec<(GroupId, StreamKey)> = cells.keys().cloned().collect();
    let mut arrivals: Vec<usize> = Vec::new();
    for (k, key) in keys.iter().enumerate() {
        arrivals.extend(std::iter::repeat_n(k, cells[key].demanded as usize));
    }
    arrivals.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    for k in arrivals {
        let stream = &keys[k].1;
        let b = u64::from(stream.bitrate);
        let cell = cells.get_mut(&keys[k]).expect("present");
        if let Some(j) = (0..live.len()).find(|&j| live[j].cached.contains(stream) && live[j].residual >= b) {
            serve(cell, ids[j], &mut live[j], b, 1);
            continue;
        }
        // miss: this viewer is served by the origin while the stream is pulled in
        let size = SegmentSet::size_of(stream, window);
        let installer = (0..live.len())
            .filter(|&j| {
                !live[j].cached.contains(stream)
                    && live[j].residual_cache >= size
                    && live[j].residual >= b
            })
            .max_by(|&x, &y| live[x].residual.cmp(&live[y].residual).then(y.cmp(&x)));
        if let Some(j) = installer {
            live[j].residual_cache -= size;
            live[j].cached.insert(stream.clone());
        }
    }
    usage_of(&ids, &live)
}

/// Derives a per-window, per-tag seed from the experiment seed.
pub(crate) fn mix_seed(seed: u64, window_start: u64, tag: &str) -> u64 {
    // FNV-1a, stable across platforms and releases
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let bytes = seed
        .to_le_bytes()
        .into_iter()
        .chain(window_start.to_le_bytes())
        .chain(tag.bytes());
    for byte in bytes {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Assembles cluster results into a window outcome; requests from groups
/// outside every roster go to the origin.
pub(crate) fn merge(
    topology: &Topology,
    allocation: &Allocation,
    snapshot: &ViewershipSnapshot,
    parts: Vec<(ClusterId, ClusterOutcome)>,
) -> Result<DispatchOutcome, SimError> {
    let mut out = DispatchOutcome {
        window: snapshot.window,
        cells: BTreeMap::new(),
        servers: BTreeMap::new(),
        per_cluster: BTreeMap::new(),
    };
    for (cid, part) in parts {
        out.per_cluster.insert(cid, part.traffic(snapshot.window.length));
        out.cells.extend(part.cells);
        out.servers.extend(part.servers);
    }
    for ((g, s), &n) in &snapshot.counts {
        if topology.group(g).is_none() {
            return Err(SimError::UnknownGroup(g.clone()));
        }
        if n == 0 || allocation.cluster_of(g).is_some() {
            continue;
        }
        out.cells.insert(
            (g.clone(), s.clone()),
            CellOutcome { demanded: n, edge: 0, origin: n, servers: vec![] },
        );
    }
    Ok(out)
}

/// Serves a whole window. `schedules` is consulted for the scheduled
/// strategies; clusters without one serve everything from the origin.
pub fn dispatch_window(
    topology: &Topology,
    allocation: &Allocation,
    schedules: &BTreeMap<ClusterId, ReplicationSchedule>,
    snapshot: &ViewershipSnapshot,
    strategy: Strategy,
    alpha: f64,
    seed: u64,
) -> Result<DispatchOutcome, SimError> {
    let mut parts = Vec::with_capacity(topology.clusters.len());
    for cluster in &topology.clusters {
        let roster = allocation.roster(&cluster.id);
        let empty;
        let plan = match strategy {
            Strategy::Cort => ClusterPlan::Reactive {
                alpha,
                seed: mix_seed(seed, snapshot.window.start, cluster.id.as_str()),
            },
            _ => match schedules.get(&cluster.id) {
                Some(s) => ClusterPlan::Scheduled(s),
                None => {
                    empty = ReplicationSchedule {
                        cluster: cluster.id.clone(),
                        window: snapshot.window,
                        alpha,
                        servers: vec![],
                        assignments: vec![],
                    };
                    ClusterPlan::Scheduled(&empty)
                }
            },
        };
        parts.push((cluster.id.clone(), dispatch_cluster(cluster, roster, snapshot, plan)?));
    }
    merge(topology, allocation, snapshot, parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EdgeServer, TimeWindow};
    use crate::replication::{plver_schedule, DemandItem};

    const W: TimeWindow = TimeWindow { start: 0, length: 10 };

    fn cluster(servers: &[(u64, u64)]) -> EdgeCluster {
        EdgeCluster {
            id: "c".into(),
            isp: "i".into(),
            city: "x".into(),
            county: "y".into(),
            state: "z".into(),
            servers: servers
                .iter()
                .enumerate()
                .map(|(i, &(bandwidth, cache))| EdgeServer {
                    id: format!("s{}", i + 1).into(),
                    bandwidth,
                    cache,
                })
                .collect(),
        }
    }

    fn snapshot(cells: &[(&str, &str, u32, u64)]) -> ViewershipSnapshot {
        let mut s = ViewershipSnapshot::new(W);
        for &(g, ch, b, n) in cells {
            s.counts.insert((g.into(), StreamKey::new(ch, b)), n);
        }
        s
    }

    #[test]
    fn cached_stream_with_room_is_served_at_the_edge() {
        let c = cluster(&[(100_000, 100_000)]);
        let snap = snapshot(&[("g", "a", 1000, 5)]);
        let demand = vec![DemandItem { group: "g".into(), stream: StreamKey::new("a", 1000), count: 5 }];
        let sched = plver_schedule(&c, &["g".into()], &demand, 1.0, W).unwrap();
        let out = dispatch_cluster(&c, &["g".into()], &snap, ClusterPlan::Scheduled(&sched)).unwrap();
        let cell = &out.cells[&("g".into(), StreamKey::new("a", 1000))];
        assert_eq!((cell.edge, cell.origin), (5, 0));
        assert_eq!(out.servers[&ServerId::from("s1")].consumed, 5000);
    }

    #[test]
    fn uncached_stream_goes_to_origin() {
        let c = cluster(&[(100_000, 100_000)]);
        let snap = snapshot(&[("g", "a", 1000, 5), ("g", "b", 400, 2)]);
        let demand = vec![DemandItem { group: "g".into(), stream: StreamKey::new("a", 1000), count: 5 }];
        let sched = plver_schedule(&c, &["g".into()], &demand, 1.0, W).unwrap();
        let out = dispatch_cluster(&c, &["g".into()], &snap, ClusterPlan::Scheduled(&sched)).unwrap();
        let cell = &out.cells[&("g".into(), StreamKey::new("b", 400))];
        assert_eq!((cell.edge, cell.origin), (0, 2));
    }

    #[test]
    fn reactive_first_viewer_installs_the_stream() {
        // the usable cache fits exactly one segment set
        let c = cluster(&[(100_000, 10_000)]);
        let snap = snapshot(&[("g", "a", 1000, 10)]);
        let out = dispatch_cluster(&c, &["g".into()], &snap, ClusterPlan::Reactive { alpha: 1.0, seed: 3 })
            .unwrap();
        let cell = &out.cells[&("g".into(), StreamKey::new("a", 1000))];
        assert_eq!((cell.edge, cell.origin), (9, 1));
        assert_eq!(out.servers[&ServerId::from("s1")].cached_kb, 10_000);
    }

    #[test]
    fn reactive_installs_on_the_server_with_most_spare_bandwidth() {
        let c = cluster(&[(2000, 50_000), (5000, 50_000)]);
        let snap = snapshot(&[("g", "a", 1000, 1)]);
        let out = dispatch_cluster(&c, &["g".into()], &snap, ClusterPlan::Reactive { alpha: 1.0, seed: 0 })
            .unwrap();
        assert_eq!(out.servers[&ServerId::from("s2")].cached_kb, 10_000);
        assert_eq!(out.servers[&ServerId::from("s1")].cached_kb, 0);
    }

    #[test]
    fn window_length_mismatch_is_an_error() {
        let c = cluster(&[(1000, 1000)]);
        let sched = plver_schedule(&c, &[], &[], 1.0, TimeWindow::new(0, 300)).unwrap();
        let err = dispatch_cluster(&c, &[], &snapshot(&[]), ClusterPlan::Scheduled(&sched));
        assert!(matches!(err, Err(SimError::WindowMismatch { .. })));
    }

    #[test]
    fn mixed_seed_depends_on_every_input() {
        let a = mix_seed(1, 0, "c");
        assert_ne!(a, mix_seed(2, 0, "c"));
        assert_ne!(a, mix_seed(1, 300, "c"));
        assert_ne!(a, mix_seed(1, 0, "d"));
        assert_eq!(a, mix_seed(1, 0, "c"));
    }
}
