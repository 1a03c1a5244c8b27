use std::collections::HashMap;

use super::{AllocationError, Allocation};
use crate::model::{ClusterId, EdgeCluster, GroupId, PreferenceTables, UserGroup};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StabilityVerdict {
    pub stable: bool,
    /// First blocking pair found, scanning groups in input order and each
    /// group's list from the top.
    pub blocking_pair: Option<(GroupId, ClusterId)>,
}

/// Looks for a blocking pair `(i, j)`: group `i` strictly prefers cluster `j`
/// to its assignment (or is unassigned and lists `j`), `j` lists `i`, and `i`
/// fits beside the groups `j` ranks above it:
/// `d_i <= C_j - sum(d_g for g in G_j ranked above i)`.
pub fn is_stable(
    allocation: &Allocation,
    groups: &[UserGroup],
    clusters: &[EdgeCluster],
    prefs: &PreferenceTables,
) -> Result<StabilityVerdict, AllocationError> {
    allocation.check_feasible(groups, clusters)?;
    let demand: HashMap<&GroupId, u64> = groups.iter().map(|g| (&g.id, g.demand)).collect();
    let by_id: HashMap<&ClusterId, &EdgeCluster> = clusters.iter().map(|c| (&c.id, c)).collect();

    for g in groups {
        let current = allocation.assigned.get(&g.id);
        for cid in prefs.group_list(&g.id) {
            if Some(cid) == current {
                break;
            }
            let Some(cluster) = by_id.get(cid) else { continue };
            let order = prefs.cluster_list(cid);
            let Some(my_rank) = order.iter().position(|x| x == &g.id) else { continue };
            let above: u64 = allocation
                .roster(cid)
                .iter()
                .filter(|other| {
                    order.iter().position(|x| x == *other).is_some_and(|r| r < my_rank)
                })
                .map(|other| demand[other])
                .sum();
            if g.demand + above <= cluster.capacity() {
                return Ok(StabilityVerdict {
                    stable: false,
                    blocking_pair: Some((g.id.clone(), cid.clone())),
                });
            }
        }
    }
    Ok(StabilityVerdict { stable: true, blocking_pair: None })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    fn alloc(pairs: &[(&str, &str)], groups: &[UserGroup], prefs: &PreferenceTables) -> Allocation {
        let pairs: Vec<(GroupId, ClusterId)> =
            pairs.iter().map(|(g, c)| ((*g).into(), (*c).into())).collect();
        from_pairs(&pairs, groups, prefs)
    }

    #[test]
    fn worked_example_outcome_is_the_unique_stable_assignment() {
        let (groups, clusters, prefs) = four_by_two();
        let stable = stable_allocations(&groups, &clusters, &prefs);
        assert_eq!(stable.len(), 1);
        let expected = alloc(&[("g1", "c1"), ("g2", "c1"), ("g3", "c2"), ("g4", "c1")], &groups, &prefs);
        assert_eq!(stable[0], expected);
    }

    #[test]
    fn spare_room_at_a_better_cluster_blocks() {
        let groups = vec![group("g", 3)];
        let clusters = vec![cluster("lv1", 10), cluster("lv2", 10)];
        let prefs = prefs(&[("g", &["lv1", "lv2"])], &[("lv1", &["g"]), ("lv2", &["g"])]);
        let a = alloc(&[("g", "lv2")], &groups, &prefs);
        let v = is_stable(&a, &groups, &clusters, &prefs).unwrap();
        assert!(!v.stable);
        assert_eq!(v.blocking_pair, Some(("g".into(), "lv1".into())));
    }

    #[test]
    fn empty_lists_are_vacuously_stable() {
        let groups = vec![group("g", 3), group("h", 1)];
        let clusters = vec![cluster("c", 10)];
        let prefs = prefs(&[("g", &[]), ("h", &[])], &[("c", &[])]);
        let a = alloc(&[], &groups, &prefs);
        assert!(is_stable(&a, &groups, &clusters, &prefs).unwrap().stable);
    }

    #[test]
    fn infeasible_input_is_an_error() {
        let groups = vec![group("g", 30)];
        let clusters = vec![cluster("c", 10)];
        let prefs = prefs(&[("g", &["c"])], &[("c", &["g"])]);
        let a = alloc(&[("g", "c")], &groups, &prefs);
        assert!(matches!(
            is_stable(&a, &groups, &clusters, &prefs),
            Err(AllocationError::Infeasible { .. })
        ));
    }
}
