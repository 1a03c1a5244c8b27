use plver_core::allocation::{
    bsearch_violation_start, greedy_allocate, is_stable, isoa_allocate_with, EvictionRule,
};
use plver_core::model::{
    apply_fluctuation, ClusterId, EdgeCluster, EdgeServer, GroupId, PreferenceTables, StreamKey,
    TimeWindow, UserGroup, ViewershipSnapshot, BITRATE_LADDER_KBPS,
};
use plver_core::replication::{
    abr_schedule, cluster_demand, plver_schedule, solve_mkp_exact, solve_mkp_greedy,
};
use plver_core::simulator::{dispatch_cluster, ClusterPlan};
use proptest::prelude::*;
use proptest::sample::subsequence;

fn group(i: usize, demand: u64) -> UserGroup {
    UserGroup {
        id: GroupId(format!("g{i}")),
        isp: "isp".into(),
        city: "city".into(),
        county: "county".into(),
        state: "state".into(),
        population_weight: 0.0,
        demand,
    }
}

fn cluster(id: &str, servers: &[(u64, u64)]) -> EdgeCluster {
    EdgeCluster {
        id: id.into(),
        isp: "isp".into(),
        city: "city".into(),
        county: "county".into(),
        state: "state".into(),
        servers: servers
            .iter()
            .enumerate()
            .map(|(i, &(bandwidth, cache))| EdgeServer {
                id: format!("{id}-s{i}").into(),
                bandwidth,
                cache,
            })
            .collect(),
    }
}

/// Groups, clusters and arbitrary (shuffled, partial) preference lists.
fn instance() -> impl Strategy<Value = (Vec<UserGroup>, Vec<EdgeCluster>, PreferenceTables)> {
    (1usize..9, 1usize..4).prop_flat_map(|(n, m)| {
        let demands = prop::collection::vec(1u64..10, n);
        let caps = prop::collection::vec(1u64..20, m);
        let group_lists = prop::collection::vec(
            subsequence((0..m).collect::<Vec<_>>(), 0..=m).prop_shuffle(),
            n,
        );
        let cluster_lists = prop::collection::vec(
            subsequence((0..n).collect::<Vec<_>>(), 0..=n).prop_shuffle(),
            m,
        );
        (demands, caps, group_lists, cluster_lists).prop_map(|(d, caps, gl, cl)| {
            let groups: Vec<UserGroup> = d.iter().enumerate().map(|(i, &x)| group(i, x)).collect();
            let clusters: Vec<EdgeCluster> =
                caps.iter().enumerate().map(|(j, &c)| cluster(&format!("c{j}"), &[(c, 1)])).collect();
            let mut prefs = PreferenceTables::default();
            for (i, l) in gl.iter().enumerate() {
                prefs.groups.insert(groups[i].id.clone(), l.iter().map(|&j| clusters[j].id.clone()).collect());
            }
            for (j, l) in cl.iter().enumerate() {
                prefs.clusters.insert(clusters[j].id.clone(), l.iter().map(|&i| groups[i].id.clone()).collect());
            }
            (groups, clusters, prefs)
        })
    })
}

/// One cluster, its single-group roster and a snapshot for that group.
fn micro_cluster() -> impl Strategy<Value = (EdgeCluster, ViewershipSnapshot, f64)> {
    let servers = prop::collection::vec((400u64..8000, 1000u64..80_000), 1..4);
    let cells = prop::collection::vec((0usize..6, 0usize..4, 1u64..6), 1..8);
    let alpha = prop::sample::select(vec![0.2, 0.4, 0.6, 0.8, 1.0]);
    (servers, cells, alpha).prop_map(|(servers, cells, alpha)| {
        let mut snap = ViewershipSnapshot::new(TimeWindow::new(0, 10));
        for (ch, tier, n) in cells {
            let key = (GroupId::from("g"), StreamKey::new(format!("ch{ch}"), BITRATE_LADDER_KBPS[tier]));
            *snap.counts.entry(key).or_insert(0) += n;
        }
        (cluster("c", &servers), snap, alpha)
    })
}

proptest! {
    #[test]
    fn bsearch_matches_a_linear_scan(
        demands in prop::collection::vec(1u64..50, 1..30),
        pick in any::<prop::sample::Index>(),
        cap_pick in any::<prop::sample::Index>(),
    ) {
        let proposer = pick.index(demands.len());
        let before: u64 = demands[..proposer].iter().sum();
        let total: u64 = demands.iter().sum();
        prop_assume!(before < total);
        let capacity = before + cap_pick.index((total - before) as usize) as u64;
        let mut acc = 0;
        let expected = demands.iter().position(|d| { acc += d; acc > capacity }).and_then(|k| k.checked_sub(1));
        prop_assert_eq!(bsearch_violation_start(&demands, capacity, proposer).unwrap(), expected);
    }

    #[test]
    fn isoa_is_feasible_and_stable_once_converged((groups, clusters, prefs) in instance()) {
        for rule in [EvictionRule::GreedyKeep, EvictionRule::Prefix] {
            let (alloc, stats) = isoa_allocate_with(&groups, &clusters, &prefs, rule);
            prop_assert!(stats.feasible_after_every_proposal);
            prop_assert!(alloc.check_feasible(&groups, &clusters).is_ok());
            prop_assert_eq!(alloc.assigned.len() + alloc.unallocated.len(), groups.len());
            for (g, c) in &alloc.assigned {
                prop_assert!(prefs.group_list(g).contains(c) && prefs.cluster_list(c).contains(g));
            }
            let verdict = is_stable(&alloc, &groups, &clusters, &prefs).unwrap();
            if stats.converged {
                prop_assert!(verdict.stable, "{:?}", verdict.blocking_pair);
            }
        }
    }

    #[test]
    fn greedy_allocation_is_feasible((groups, clusters, prefs) in instance()) {
        let alloc = greedy_allocate(&groups, &clusters, &prefs);
        prop_assert!(alloc.check_feasible(&groups, &clusters).is_ok());
    }

    #[test]
    fn knapsack_greedy_is_feasible_and_within_half_of_exact(
        weights in prop::collection::vec(1u64..60, 0..12),
        caps in prop::collection::vec(0u64..120, 1..4),
    ) {
        let greedy = solve_mkp_greedy(&weights, &caps);
        let exact = solve_mkp_exact(&weights, &caps).unwrap();
        for sol in [&greedy, &exact] {
            let mut load = vec![0u64; caps.len()];
            for (i, b) in sol.placement.iter().enumerate() {
                if let Some(b) = b {
                    load[*b] += weights[i];
                }
            }
            prop_assert!(load.iter().zip(&caps).all(|(l, c)| l <= c));
            prop_assert_eq!(load.iter().sum::<u64>(), sol.packed);
        }
        prop_assert!(greedy.packed <= exact.packed);
        prop_assert!(2 * greedy.packed >= exact.packed);
    }

    #[test]
    fn schedules_validate_and_dispatch_conserves((c, snap, alpha) in micro_cluster()) {
        let roster = vec![GroupId::from("g")];
        let demand = cluster_demand(&snap, &roster);
        let total: u64 = demand.iter().map(|d| d.count * u64::from(d.stream.bitrate)).sum();
        for schedule in [
            plver_schedule(&c, &roster, &demand, alpha, snap.window).unwrap(),
            abr_schedule(&c, &roster, &demand, alpha, snap.window).unwrap(),
        ] {
            prop_assert!(schedule.validate(&demand).is_empty());
            prop_assert!(schedule.served_traffic() <= total.min(c.capacity()));
            let outcome = dispatch_cluster(&c, &roster, &snap, ClusterPlan::Scheduled(&schedule)).unwrap();
            let served: u64 = outcome.cells.values().map(|cell| cell.edge).sum();
            let requested: u64 = outcome.cells.values().map(|cell| cell.demanded).sum();
            prop_assert_eq!(requested, snap.total_viewers());
            prop_assert!(outcome.cells.values().all(|cell| cell.edge + cell.origin == cell.demanded));
            // the same requests the schedule was built for are served at least as well
            let scheduled: u64 = schedule.assignments.iter().map(|a| a.viewers).sum();
            prop_assert!(served >= scheduled);
        }
        let reactive = ClusterPlan::Reactive { alpha, seed: 7 };
        let outcome = dispatch_cluster(&c, &roster, &snap, reactive).unwrap();
        prop_assert!(outcome.cells.values().all(|cell| cell.edge + cell.origin == cell.demanded));
        for u in outcome.servers.values() {
            prop_assert!(u.consumed <= u.bandwidth && u.cached_kb <= u.usable_cache);
        }
    }

    #[test]
    fn fluctuation_scales_each_channel_and_shares_signs_across_magnitudes(
        (_, snap, _) in micro_cluster(),
        seed in any::<u64>(),
        f in 0.05f64..0.95,
    ) {
        let out = apply_fluctuation(&snap, f, seed).unwrap();
        let smaller = apply_fluctuation(&snap, f / 2.0, seed).unwrap();
        let before = snap.channel_totals();
        let after = out.channel_totals();
        let half = smaller.channel_totals();
        for (ch, &n) in &before {
            let up = (n as f64 * (1.0 + f) + 0.5).floor() as u64;
            let down = (n as f64 * (1.0 - f) + 0.5).floor() as u64;
            let got = after.get(ch).copied().unwrap_or(0);
            prop_assert!(got == up || got == down, "{} -> {}", n, got);
            // the coin for a channel does not depend on the magnitude
            let got_half = half.get(ch).copied().unwrap_or(0);
            prop_assert!(!(got > n && got_half < n) && !(got < n && got_half > n));
        }
        prop_assert!(after.keys().all(|k| before.contains_key(k)));
    }
}

#[test]
fn unlisted_groups_never_block() {
    // a group neither cluster lists cannot be placed and cannot destabilize
    let groups = vec![group(0, 5), group(1, 5)];
    let clusters = vec![cluster("c0", &[(10, 1)])];
    let mut prefs = PreferenceTables::default();
    prefs.groups.insert(groups[0].id.clone(), vec![ClusterId::from("c0")]);
    prefs.groups.insert(groups[1].id.clone(), vec![ClusterId::from("c0")]);
    prefs.clusters.insert("c0".into(), vec![groups[0].id.clone()]);
    let (alloc, stats) = isoa_allocate_with(&groups, &clusters, &prefs, EvictionRule::default());
    assert!(stats.converged);
    assert_eq!(alloc.unallocated, vec![groups[1].id.clone()]);
    assert!(is_stable(&alloc, &groups, &clusters, &prefs).unwrap().stable);
}
