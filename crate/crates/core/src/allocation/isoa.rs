//! Integral stable one-to-multiple allocation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{assemble, AllocationError, Allocation, Instance};
use crate::model::{EdgeCluster, PreferenceTables, UserGroup};

/// Fixed so that repairs, and hence results, are reproducible.
const REPAIR_SEED: u64 = 0x5EED;

/// How an over-capacity roster is trimmed after the violation point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvictionRule {
    /// Walk the suffix after the violation point and keep each group that
    /// still fits beside those already kept.
    #[default]
    GreedyKeep,
    /// Keep the longest feasible prefix in the cluster's order; evict every
    /// group after it.
    Prefix,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IsoaStats {
    pub proposals: usize,
    /// Proposals that ended with the proposer turned away, each of which
    /// permanently drops one cluster from the proposer's list.
    pub rejections: usize,
    pub evictions: usize,
    /// Whether every roster fit its capacity after every proposal.
    pub feasible_after_every_proposal: bool,
    /// Blocking pairs reopened after the proposal queue ran dry.
    pub repairs: usize,
    /// False when the repair budget ran out with a blocking pair left.
    pub converged: bool,
}

/// Index of the last element of the longest prefix of `demands` whose sum
/// fits `capacity`, or `None` when even the first element does not fit.
///
/// `proposer` is the position of the newly inserted element. The prefix ending
/// just before it is known to fit, so the binary search runs over
/// `[proposer - 1, len - 1]`.
pub fn bsearch_violation_start(
    demands: &[u64],
    capacity: u64,
    proposer: usize,
) -> Result<Option<usize>, AllocationError> {
    if proposer >= demands.len() {
        return Err(AllocationError::ProposerNotInRoster(proposer));
    }
    let mut prefix = Vec::with_capacity(demands.len());
    let mut acc = 0u64;
    for d in demands {
        acc += d;
        prefix.push(acc);
    }
    if acc <= capacity {
        return Err(AllocationError::RosterFeasible);
    }
    if proposer > 0 && prefix[proposer - 1] > capacity {
        return Err(AllocationError::PrefixInfeasible);
    }
    // lo: last index known to fit (-1 = empty prefix); hi: first known to overflow.
    let mut lo = proposer as isize - 1;
    let mut hi = demands.len() as isize - 1;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if prefix[mid as usize] <= capacity {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(usize::try_from(lo).ok())
}

/// Runs the allocation with the default eviction rule.
pub fn isoa_allocate(
    groups: &[UserGroup],
    clusters: &[EdgeCluster],
    prefs: &PreferenceTables,
) -> Allocation {
    isoa_allocate_with(groups, clusters, prefs, EvictionRule::default()).0
}

/// Group-proposing deferred acceptance with integral demands.
///
/// Free groups wait in a FIFO queue (input order). A proposer is inserted into
/// the target roster at the cluster's rank for it; if the roster then exceeds
/// capacity the violation point is located with [`bsearch_violation_start`]
/// and the suffix is trimmed per `rule`. A proposer that is itself trimmed, or
/// that the cluster does not list, drops that cluster and proposes again right
/// away; other trimmed groups rejoin the back of the queue with their lists
/// intact.
///
/// With item sizes, a group turned away early can later fit once a larger
/// group below it is evicted, so an empty queue does not always mean a stable
/// outcome. When that happens the blocking group is put back on the queue
/// pointing at the cluster that would take it, and proposals resume. This is
/// bounded by a repair budget; instances exist with no stable allocation at
/// all, and there [`IsoaStats::converged`] comes back false.
pub fn isoa_allocate_with(
    groups: &[UserGroup],
    clusters: &[EdgeCluster],
    prefs: &PreferenceTables,
    rule: EvictionRule,
) -> (Allocation, IsoaStats) {
    let inst = Instance::new(groups, clusters, prefs);
    let mut next_choice = vec![0usize; groups.len()];
    let mut rosters: Vec<Vec<usize>> = vec![Vec::new(); clusters.len()];
    let mut load = vec![0u64; clusters.len()];
    let mut free = inst.free_queue();
    let mut stats = IsoaStats { feasible_after_every_proposal: true, ..IsoaStats::default() };

    let mut assigned_to: Vec<Option<usize>> = vec![None; groups.len()];
    let mut pick_rng = ChaCha8Rng::seed_from_u64(REPAIR_SEED);
    let repair_budget = 4 * inst.group_prefs.iter().map(Vec::len).sum::<usize>() + 100;

    loop {
        while let Some(i) = free.pop_front() {
            while let Some(&j) = inst.group_prefs[i].get(next_choice[i]) {
                stats.proposals += 1;
                let ranks = &inst.cluster_rank[j];
                let Some(&rank) = ranks.get(&i) else {
                    // the cluster does not list this group: mutually unmatchable
                    next_choice[i] += 1;
                    stats.rejections += 1;
                    continue;
                };
                let roster = &mut rosters[j];
                let pos = roster.partition_point(|g| ranks[g] < rank);
                roster.insert(pos, i);
                load[j] += inst.demand[i];
                let cap = inst.capacity[j];
                if load[j] <= cap {
                    break;
                }

                let demands: Vec<u64> = roster.iter().map(|&g| inst.demand[g]).collect();
                let last_fit = bsearch_violation_start(&demands, cap, pos)
                    .expect("roster over capacity with a feasible prefix ahead of the proposer");
                let cut = last_fit.map_or(0, |m| m + 1);
                let mut kept_load: u64 = demands[..cut].iter().sum();
                let suffix = roster.split_off(cut);
                let mut proposer_out = false;
                let mut evicted = Vec::new();

                if suffix[0] == i {
                    // the proposer is the first overflow; the rest was feasible before it arrived
                    proposer_out = true;
                    kept_load += suffix[1..].iter().map(|&g| inst.demand[g]).sum::<u64>();
                    roster.extend_from_slice(&suffix[1..]);
                } else {
                    match rule {
                        EvictionRule::Prefix => evicted = suffix,
                        EvictionRule::GreedyKeep => {
                            for g in suffix {
                                if kept_load + inst.demand[g] <= cap {
                                    kept_load += inst.demand[g];
                                    roster.push(g);
                                } else {
                                    evicted.push(g);
                                }
                            }
                        }
                    }
                }
                load[j] = kept_load;
                if load[j] > cap {
                    stats.feasible_after_every_proposal = false;
                }
                stats.evictions += evicted.len();
                free.extend(evicted);
                if proposer_out {
                    next_choice[i] += 1;
                    stats.rejections += 1;
                    continue;
                }
                break;
            }
        }

        assigned_to.fill(None);
        for (j, roster) in rosters.iter().enumerate() {
            for &g in roster {
                assigned_to[g] = Some(j);
            }
        }
        let pairs = blocking_pairs(&inst, &rosters, &assigned_to);
        let Some(&(i, j)) = pairs.get(pick_rng.random_range(0..pairs.len().max(1))) else {
            stats.converged = true;
            break;
        };
        if stats.repairs == repair_budget {
            break;
        }
        // Reopen the blocked pair: the group leaves its roster and proposes
        // again starting from the cluster that would take it.
        stats.repairs += 1;
        if let Some(cur) = assigned_to[i].take() {
            rosters[cur].retain(|&g| g != i);
            load[cur] -= inst.demand[i];
        }
        next_choice[i] = inst.group_prefs[i].iter().position(|&c| c == j).expect("listed");
        free.push_front(i);
    }

    (assemble(groups, clusters, &rosters), stats)
}

/// Every `(group, cluster)` pair where the group prefers the cluster to its
/// current place and fits beside the better-ranked members.
fn blocking_pairs(
    inst: &Instance,
    rosters: &[Vec<usize>],
    assigned_to: &[Option<usize>],
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, list) in inst.group_prefs.iter().enumerate() {
        for &j in list {
            if assigned_to[i] == Some(j) {
                break;
            }
            let ranks = &inst.cluster_rank[j];
            let Some(&rank) = ranks.get(&i) else { continue };
            let above: u64 =
                rosters[j].iter().filter(|g| ranks[*g] < rank).map(|&g| inst.demand[g]).sum();
            if above + inst.demand[i] <= inst.capacity[j] {
                out.push((i, j));
            }
        }
    }
    out
}
