//! Three-phase proactive scheduler.

use std::collections::BTreeMap;

use super::mkp::first_fit_runs;
use super::{reward, DemandItem, ReplicationError, ReplicationSchedule, Workspace};
use crate::model::{EdgeCluster, GroupId, StreamKey, TimeWindow};

/// Builds one cluster's schedule for `window`.
///
/// 1. Viewers are packed onto server bandwidth by first-fit decreasing. Each
///    server then admits the streams of its packed viewers, best reward first,
///    while their segment sets fit its usable cache; viewers of a stream that
///    does not fit stay unassigned.
/// 2. Unassigned viewers go to any server that already caches their stream
///    and has bandwidth left, servers in id order.
/// 3. While viewers remain, the (stream, server) pair with the highest reward
///    whose segment set fits is admitted and `reward / bitrate` viewers of the
///    stream are assigned to it.
///
/// Ties go to the lower stream id, then the lower server id.
pub fn plver_schedule(
    cluster: &EdgeCluster,
    roster: &[GroupId],
    demand: &[DemandItem],
    alpha: f64,
    window: TimeWindow,
) -> Result<ReplicationSchedule, ReplicationError> {
    let mut ws = Workspace::new(cluster, roster, demand, alpha, window)?;
    pack_and_admit(&mut ws);
    ws.redirect_to_cached();
    offload(&mut ws);
    Ok(ws.finish())
}

fn pack_and_admit(ws: &mut Workspace) {
    // heaviest first; the stable sort keeps (stream, group) order within a bitrate
    let mut order: Vec<usize> = (0..ws.items.len()).collect();
    order.sort_by(|&a, &b| ws.items[b].stream.bitrate.cmp(&ws.items[a].stream.bitrate));
    let runs: Vec<(u64, u64)> =
        order.iter().map(|&k| (ws.items[k].per_viewer_bandwidth(), ws.items[k].count)).collect();
    let caps: Vec<u64> = ws.plans.iter().map(|p| p.bandwidth).collect();

    // packed[server][stream] -> [(item, viewers)]
    let mut packed: Vec<BTreeMap<StreamKey, Vec<(usize, u64)>>> = vec![BTreeMap::new(); caps.len()];
    for (r, bin, n) in first_fit_runs(&runs, &caps) {
        let k = order[r];
        packed[bin].entry(ws.items[k].stream.clone()).or_default().push((k, n));
    }

    for (j, mut candidates) in packed.into_iter().enumerate() {
        while !candidates.is_empty() {
            let available = ws.plans[j].residual_bandwidth;
            let (stream, _) = candidates
                .keys()
                .map(|s| (s, reward(u64::from(s.bitrate), available, ws.unassigned(s))))
                .fold(None, |best: Option<(&StreamKey, u64)>, (s, r)| match best {
                    Some((_, br)) if br >= r => best,
                    _ => Some((s, r)),
                })
                .expect("non-empty");
            let stream = stream.clone();
            let viewers = candidates.remove(&stream).expect("present");
            if ws.segment_size(&stream) > ws.plans[j].residual_cache {
                continue;
            }
            ws.cache(j, &stream);
            for (k, n) in viewers {
                ws.assign(j, k, n);
            }
        }
    }
}

fn offload(ws: &mut Workspace) {
    loop {
        let streams = ws.pending_streams();
        if streams.is_empty() {
            return;
        }
        let mut best: Option<(u64, usize, usize)> = None; // (reward, stream idx, server)
        for (si, s) in streams.iter().enumerate() {
            let size = ws.segment_size(s);
            let waiting = ws.unassigned(s);
            for (j, plan) in ws.plans.iter().enumerate() {
                if plan.cached.contains(s) || plan.residual_cache < size {
                    continue;
                }
                let r = reward(u64::from(s.bitrate), plan.residual_bandwidth, waiting);
                if r > 0 && best.is_none_or(|(br, _, _)| r > br) {
                    best = Some((r, si, j));
                }
            }
        }
        let Some((r, si, j)) = best else { return };
        let stream = &streams[si];
        ws.cache(j, stream);
        let mut phi = r / u64::from(stream.bitrate);
        let items: Vec<usize> = ws.items_of(stream).collect();
        for k in items {
            let n = ws.remaining[k].min(phi);
            ws.assign(j, k, n);
            phi -= n;
        }
        debug_assert_eq!(phi, 0);
    }
}
