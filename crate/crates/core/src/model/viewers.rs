//! Integer viewer splitting and viewership perturbation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{
    ChannelId, GroupId, StreamKey, TimeWindow, TraceWindow, UserGroup, ViewershipSnapshot,
    BITRATE_LADDER_KBPS,
};

#[derive(Debug, Error, PartialEq)]
pub enum ViewerError {
    #[error("cannot distribute viewers over an empty group list")]
    NoGroups,
    #[error("tier mix is empty")]
    NoTiers,
    #[error("weights must be non-negative and sum to 1 (got {0})")]
    BadWeights(f64),
    #[error("fluctuation magnitude must lie in [0, 1] (got {0})")]
    BadFluctuation(f64),
}

/// Splits `total` proportionally to `weights`, preserving the total exactly.
///
/// Each share is floored; the leftover units go to the largest fractional
/// remainders, ties to the lower index. All-zero weights yield all zeros
/// unless `total > 0`, in which case the split is uniform.
pub fn largest_remainder(total: u64, weights: &[f64]) -> Vec<u64> {
    if weights.is_empty() {
        return Vec::new();
    }
    let sum: f64 = weights.iter().sum();
    let uniform;
    let weights = if sum > 0.0 {
        weights
    } else {
        uniform = vec![1.0; weights.len()];
        &uniform[..]
    };
    let sum: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(weights.len());
    let mut rems = Vec::with_capacity(weights.len());
    for (i, w) in weights.iter().enumerate() {
        let quota = total as f64 * w / sum;
        let fl = quota.floor();
        out.push(fl as u64);
        rems.push((quota - fl, i));
    }
    let assigned: u64 = out.iter().sum();
    // floating point can push the floors over by one in pathological cases
    let mut leftover = total.saturating_sub(assigned);
    let mut excess = assigned.saturating_sub(total);
    rems.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in &rems {
        if leftover == 0 {
            break;
        }
        out[i] += 1;
        leftover -= 1;
    }
    for &(_, i) in rems.iter().rev() {
        if excess == 0 {
            break;
        }
        if out[i] > 0 {
            out[i] -= 1;
            excess -= 1;
        }
    }
    out
}

/// Exact integer version of [`largest_remainder`] for integer weights.
pub fn largest_remainder_int(total: u64, weights: &[u64]) -> Vec<u64> {
    let sum: u128 = weights.iter().map(|&w| u128::from(w)).sum();
    if sum == 0 {
        return largest_remainder(total, &vec![0.0; weights.len()]);
    }
    let mut out = Vec::with_capacity(weights.len());
    let mut rems = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        let num = u128::from(total) * u128::from(w);
        out.push((num / sum) as u64);
        rems.push((num % sum, i));
    }
    let mut leftover = total - out.iter().sum::<u64>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in &rems {
        if leftover == 0 {
            break;
        }
        out[i] += 1;
        leftover -= 1;
    }
    out
}

/// Uniform mix over the ladder tiers not exceeding the broadcast bitrate.
pub fn uniform_tier_mix(broadcast_bitrate: u32) -> Vec<(u32, f64)> {
    let tiers: Vec<u32> =
        BITRATE_LADDER_KBPS.iter().copied().filter(|&b| b <= broadcast_bitrate).collect();
    let share = 1.0 / tiers.len().max(1) as f64;
    tiers.into_iter().map(|b| (b, share)).collect()
}

/// Splits one channel's viewers over groups by population weight, then each
/// group's share over bitrate tiers. Zero cells are omitted.
pub fn distribute_viewers(
    channel: &ChannelId,
    viewers: u64,
    groups: &[(GroupId, f64)],
    tier_mix: &[(u32, f64)],
) -> Result<BTreeMap<(GroupId, StreamKey), u64>, ViewerError> {
    if groups.is_empty() {
        return Err(ViewerError::NoGroups);
    }
    if tier_mix.is_empty() {
        return Err(ViewerError::NoTiers);
    }
    check_weights(groups.iter().map(|(_, w)| *w))?;
    check_weights(tier_mix.iter().map(|(_, w)| *w))?;

    let group_weights: Vec<f64> = groups.iter().map(|(_, w)| *w).collect();
    let tier_weights: Vec<f64> = tier_mix.iter().map(|(_, w)| *w).collect();
    let mut out = BTreeMap::new();
    for ((gid, _), n) in groups.iter().zip(largest_remainder(viewers, &group_weights)) {
        if n == 0 {
            continue;
        }
        for ((tier, _), k) in tier_mix.iter().zip(largest_remainder(n, &tier_weights)) {
            if k > 0 {
                *out.entry((gid.clone(), StreamKey::new(channel.clone(), *tier))).or_insert(0) += k;
            }
        }
    }
    Ok(out)
}

type CellKey = (GroupId, StreamKey);

fn check_weights(weights: impl Iterator<Item = f64>) -> Result<(), ViewerError> {
    let mut sum = 0.0;
    for w in weights {
        if w.is_nan() || w < 0.0 {
            return Err(ViewerError::BadWeights(w));
        }
        sum += w;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(ViewerError::BadWeights(sum));
    }
    Ok(())
}

/// Builds the snapshot for one trace window, splitting every channel's
/// viewers over `groups` by population weight and over the uniform tier mix.
pub fn build_snapshot(
    trace_window: &TraceWindow,
    groups: &[UserGroup],
    window_len: u64,
) -> Result<ViewershipSnapshot, ViewerError> {
    let weights: Vec<(GroupId, f64)> =
        groups.iter().map(|g| (g.id.clone(), g.population_weight)).collect();
    let mut snap = ViewershipSnapshot::new(TimeWindow::new(trace_window.start, window_len));
    for rec in trace_window.latest_per_channel() {
        let mix = uniform_tier_mix(rec.bitrate_kbps);
        let cells = distribute_viewers(&rec.channel_id, rec.viewers, &weights, &mix)?;
        for (k, v) in cells {
            *snap.counts.entry(k).or_insert(0) += v;
        }
    }
    Ok(snap)
}

/// Scales every channel's viewer total by `1 + f` or `1 - f` (seeded coin
/// flip per channel, channels visited in id order), rounds half-up, and
/// re-splits the new total over the channel's existing (group, tier) cells.
pub fn apply_fluctuation(
    snapshot: &ViewershipSnapshot,
    magnitude: f64,
    seed: u64,
) -> Result<ViewershipSnapshot, ViewerError> {
    if !(0.0..=1.0).contains(&magnitude) {
        return Err(ViewerError::BadFluctuation(magnitude));
    }
    if magnitude == 0.0 {
        return Ok(snapshot.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_channel: BTreeMap<&ChannelId, Vec<(&CellKey, u64)>> = BTreeMap::new();
    for (k, &n) in &snapshot.counts {
        by_channel.entry(&k.1.channel).or_default().push((k, n));
    }
    let mut out = ViewershipSnapshot::new(snapshot.window);
    for cells in by_channel.values() {
        let total: u64 = cells.iter().map(|(_, n)| n).sum();
        let up = rng.random_bool(0.5);
        let factor = if up { 1.0 + magnitude } else { 1.0 - magnitude };
        let scaled = (total as f64 * factor + 0.5).floor() as u64;
        let weights: Vec<u64> = cells.iter().map(|(_, n)| *n).collect();
        for ((k, _), n) in cells.iter().zip(largest_remainder_int(scaled, &weights)) {
            if n > 0 {
                out.counts.insert((*k).clone(), n);
            }
        }
    }
    Ok(out)
}
