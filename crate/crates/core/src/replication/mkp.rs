//! Multiple knapsack with profit equal to weight.

use super::ReplicationError;

pub const EXACT_MAX_ITEMS: usize = 16;
pub const EXACT_MAX_BINS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MkpSolution {
    /// Bin index per item, `None` when left out.
    pub placement: Vec<Option<usize>>,
    /// Total weight packed.
    pub packed: u64,
}

/// First-fit decreasing. Items are taken heaviest first (stable, so equal
/// weights keep the caller's order) and each goes into the first bin with
/// room.
pub fn solve_mkp_greedy(weights: &[u64], capacities: &[u64]) -> MkpSolution {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].cmp(&weights[a]));
    let mut residual = capacities.to_vec();
    let mut placement = vec![None; weights.len()];
    let mut packed = 0;
    for i in order {
        if let Some(bin) = residual.iter().position(|&r| r >= weights[i]) {
            residual[bin] -= weights[i];
            placement[i] = Some(bin);
            packed += weights[i];
        }
    }
    MkpSolution { placement, packed }
}

/// First-fit decreasing over items given as `(weight, count)` runs, already
/// ordered heaviest first. Returns `(run, bin, count)` placements; equal to
/// expanding the runs into unit items and calling [`solve_mkp_greedy`].
pub(crate) fn first_fit_runs(runs: &[(u64, u64)], capacities: &[u64]) -> Vec<(usize, usize, u64)> {
    debug_assert!(runs.windows(2).all(|w| w[0].0 >= w[1].0));
    let mut residual = capacities.to_vec();
    let mut out = Vec::new();
    for (r, &(w, mut n)) in runs.iter().enumerate() {
        if w == 0 {
            continue;
        }
        for (bin, room) in residual.iter_mut().enumerate() {
            if n == 0 {
                break;
            }
            let k = (*room / w).min(n);
            if k > 0 {
                *room -= k * w;
                n -= k;
                out.push((r, bin, k));
            }
        }
    }
    out
}

/// Exact optimum by depth-first branch and bound.
///
/// Items are branched heaviest first (stable); each tries bins in index order
/// and then "left out", so among optimal packings the first one in that
/// lexicographic order is returned. Bins whose residual equals an earlier
/// bin's at the same node are skipped, which only prunes mirror images.
pub fn solve_mkp_exact(weights: &[u64], capacities: &[u64]) -> Result<MkpSolution, ReplicationError> {
    if weights.len() > EXACT_MAX_ITEMS || capacities.len() > EXACT_MAX_BINS {
        return Err(ReplicationError::TooLarge {
            items: weights.len(),
            bins: capacities.len(),
            max_items: EXACT_MAX_ITEMS,
            max_bins: EXACT_MAX_BINS,
        });
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].cmp(&weights[a]));
    let sorted: Vec<u64> = order.iter().map(|&i| weights[i]).collect();
    let mut suffix = vec![0u64; sorted.len() + 1];
    for k in (0..sorted.len()).rev() {
        suffix[k] = suffix[k + 1] + sorted[k];
    }

    let mut search = Search {
        weights: &sorted,
        suffix: &suffix,
        residual: capacities.to_vec(),
        current: vec![None; sorted.len()],
        best: vec![None; sorted.len()],
        best_value: 0,
        upper: suffix[0].min(capacities.iter().sum()),
    };
    search.dfs(0, 0);

    let mut placement = vec![None; weights.len()];
    for (k, &i) in order.iter().enumerate() {
        placement[i] = search.best[k];
    }
    Ok(MkpSolution { placement, packed: search.best_value })
}

struct Search<'a> {
    weights: &'a [u64],
    suffix: &'a [u64],
    residual: Vec<u64>,
    current: Vec<Option<usize>>,
    best: Vec<Option<usize>>,
    best_value: u64,
    upper: u64,
}

impl Search<'_> {
    /// Returns true once the global upper bound is reached.
    fn dfs(&mut self, k: usize, value: u64) -> bool {
        if value > self.best_value {
            self.best_value = value;
            self.best.clone_from(&self.current);
            if value == self.upper {
                return true;
            }
        }
        if k == self.weights.len() {
            return false;
        }
        let room: u64 = self.residual.iter().sum();
        if value + self.suffix[k].min(room) <= self.best_value {
            return false;
        }
        let w = self.weights[k];
        for bin in 0..self.residual.len() {
            let r = self.residual[bin];
            if r < w || self.residual[..bin].contains(&r) {
                continue;
            }
            self.residual[bin] -= w;
            self.current[k] = Some(bin);
            let done = self.dfs(k + 1, value + w);
            self.current[k] = None;
            self.residual[bin] += w;
            if done {
                return true;
            }
        }
        self.dfs(k + 1, value)
    }
}
