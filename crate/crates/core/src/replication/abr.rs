//! Popularity auction baseline.

use super::{DemandItem, ReplicationError, ReplicationSchedule, Workspace};
use crate::model::{EdgeCluster, GroupId, StreamKey, TimeWindow};

/// Each server, in id order, caches the streams with the most viewers in the
/// cluster (ties to the lower stream id) as long as their segment sets fit;
/// a stream that does not fit is passed over for smaller ones. Viewers are
/// then matched to caching servers with bandwidth to spare.
pub fn abr_schedule(
    cluster: &EdgeCluster,
    roster: &[GroupId],
    demand: &[DemandItem],
    alpha: f64,
    window: TimeWindow,
) -> Result<ReplicationSchedule, ReplicationError> {
    let mut ws = Workspace::new(cluster, roster, demand, alpha, window)?;
    let mut ranked: Vec<(u64, StreamKey)> = Vec::new();
    for (k, d) in ws.items.iter().enumerate() {
        match ranked.last_mut() {
            Some((n, s)) if s == &d.stream => *n += ws.remaining[k],
            _ => ranked.push((ws.remaining[k], d.stream.clone())),
        }
    }
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));

    for j in 0..ws.plans.len() {
        for (_, stream) in &ranked {
            if ws.segment_size(stream) <= ws.plans[j].residual_cache {
                ws.cache(j, stream);
            }
        }
    }
    ws.redirect_to_cached();
    Ok(ws.finish())
}
