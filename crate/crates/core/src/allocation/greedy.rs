use super::{assemble, Allocation, Instance};
use crate::model::{EdgeCluster, PreferenceTables, UserGroup};

/// First-fit baseline: groups in input order each take the most preferred
/// listed cluster that lists them back and still has room. Nothing is ever
/// evicted.
pub fn greedy_allocate(
    groups: &[UserGroup],
    clusters: &[EdgeCluster],
    prefs: &PreferenceTables,
) -> Allocation {
    let inst = Instance::new(groups, clusters, prefs);
    let mut load = vec![0u64; clusters.len()];
    let mut rosters: Vec<Vec<usize>> = vec![Vec::new(); clusters.len()];
    for i in 0..groups.len() {
        let d = inst.demand[i];
        let pick = inst.group_prefs[i]
            .iter()
            .copied()
            .find(|&j| inst.cluster_rank[j].contains_key(&i) && load[j] + d <= inst.capacity[j]);
        if let Some(j) = pick {
            load[j] += d;
            rosters[j].push(i);
        }
    }
    for (j, roster) in rosters.iter_mut().enumerate() {
        roster.sort_by_key(|g| inst.cluster_rank[j][g]);
    }
    assemble(groups, clusters, &rosters)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::isoa_allocate;
    use super::*;
    use crate::model::ClusterId;

    #[test]
    fn worked_example_in_input_order() {
        let (groups, clusters, prefs) = four_by_two();
        let alloc = greedy_allocate(&groups, &clusters, &prefs);
        let c1: Vec<&str> = alloc.roster(&ClusterId::from("c1")).iter().map(|g| g.as_str()).collect();
        let c2: Vec<&str> = alloc.roster(&ClusterId::from("c2")).iter().map(|g| g.as_str()).collect();
        assert_eq!(c1, vec!["g1", "g3", "g4"]);
        assert_eq!(c2, vec!["g2"]);
        alloc.check_feasible(&groups, &clusters).unwrap();
    }

    #[test]
    fn empty_list_is_unallocated() {
        let groups = vec![group("g", 1)];
        let clusters = vec![cluster("c", 10)];
        let prefs = prefs(&[("g", &[])], &[("c", &["g"])]);
        assert_eq!(greedy_allocate(&groups, &clusters, &prefs).unallocated.len(), 1);
    }

    #[test]
    fn no_contention_matches_isoa() {
        let groups = vec![group("a", 3), group("b", 4), group("c", 5)];
        let clusters = vec![cluster("x", 12), cluster("y", 12)];
        let prefs = prefs(
            &[("a", &["x", "y"]), ("b", &["x", "y"]), ("c", &["x"])],
            &[("x", &["c", "b", "a"]), ("y", &["a", "b"])],
        );
        let g = greedy_allocate(&groups, &clusters, &prefs);
        assert_eq!(g.roster(&"x".into()).len(), 3);
        assert_eq!(g, isoa_allocate(&groups, &clusters, &prefs));
    }
}
