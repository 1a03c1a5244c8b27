//! Stable allocation of user groups to edge clusters and proactive,
//! window-by-window replication of live-video streams onto edge servers,
//! together with a trace-driven simulator that scores replication strategies
//! by the share of traffic the edge absorbs.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: topology, channels, traces and viewership snapshots;
//! - [`allocation`]: the integral stable one-to-multiple allocation, the
//!   greedy baseline and a stability checker;
//! - [`replication`]: the three-phase proactive scheduler, the auction
//!   baseline, knapsack solvers and the replication table;
//! - [`simulator`]: request dispatch, reactive caching and metrics.

pub mod allocation;
pub mod model;
pub mod replication;
pub mod simulator;

pub use allocation::{greedy_allocate, is_stable, isoa_allocate, Allocation, AllocationError};
pub use model::{
    ChannelId, ClusterId, EdgeCluster, EdgeServer, GroupId, PreferenceTables, SegmentSet,
    ServerId, StreamKey, TimeWindow, Topology, UserGroup, ViewershipSnapshot,
};
