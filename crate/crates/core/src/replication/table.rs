//! Stream-to-server lookup built from the per-server cached sets.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ReplicationSchedule;
use crate::model::{ChannelId, ServerId, StreamKey};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    pub channel_id: ChannelId,
    pub bitrate: u32,
    pub window_start: u64,
    pub servers: Vec<ServerId>,
}

/// `(stream, window start) -> servers caching it`, servers sorted by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplicationTable {
    entries: BTreeMap<(StreamKey, u64), Vec<ServerId>>,
}

impl ReplicationTable {
    pub fn build<'a>(schedules: impl IntoIterator<Item = &'a ReplicationSchedule>) -> Self {
        let mut sets: BTreeMap<(StreamKey, u64), BTreeSet<ServerId>> = BTreeMap::new();
        for schedule in schedules {
            for plan in &schedule.servers {
                for stream in &plan.cached {
                    sets.entry((stream.clone(), schedule.window.start))
                        .or_default()
                        .insert(plan.server.clone());
                }
            }
        }
        Self { entries: sets.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect() }
    }

    pub fn lookup(&self, channel: &ChannelId, bitrate: u32, window_start: u64) -> &[ServerId] {
        self.entries
            .get(&(StreamKey { channel: channel.clone(), bitrate }, window_start))
            .map_or(&[], Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Cached streams per server for one window. Servers caching nothing do
    /// not appear.
    pub fn invert(&self, window_start: u64) -> BTreeMap<ServerId, BTreeSet<StreamKey>> {
        let mut out: BTreeMap<ServerId, BTreeSet<StreamKey>> = BTreeMap::new();
        for ((stream, start), servers) in &self.entries {
            if *start != window_start {
                continue;
            }
            for server in servers {
                out.entry(server.clone()).or_default().insert(stream.clone());
            }
        }
        out
    }

    pub fn entries(&self) -> Vec<TableEntry> {
        self.entries
            .iter()
            .map(|((stream, start), servers)| TableEntry {
                channel_id: stream.channel.clone(),
                bitrate: stream.bitrate,
                window_start: *start,
                servers: servers.clone(),
            })
            .collect()
    }

    pub fn from_entries(entries: Vec<TableEntry>) -> Self {
        let mut table = Self::default();
        for e in entries {
            let mut servers = e.servers;
            servers.sort();
            servers.dedup();
            table.entries.insert((StreamKey::new(e.channel_id, e.bitrate), e.window_start), servers);
        }
        table
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries()).expect("table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::from_entries(serde_json::from_str(text)?))
    }
}
