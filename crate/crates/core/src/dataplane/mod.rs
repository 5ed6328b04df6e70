//! Per-node forwarding: LPM lookup, captive filters with filter-based
//! forwarding actions, RPF, tunnel termination, L2 acceptance and switching,
//! and the truncated punt path to the control plane.

mod fib;
mod filter;
mod l2;
mod pipeline;
mod rpf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netcore::{MacAddress, Prefix};

pub use fib::{fib_lookup, Fib, FibEntry, NextHop, NoRoute};
pub use filter::{eval_filters, first_match, sort_rules, Action, FilterRule, MatchSpec};
pub use l2::{l2_accept, switch_forward, L2Verdict, MacTable};
pub use pipeline::{
    originate, router_forward, time_exceeded, DropReason, DroppedPacket, Emission, ForwardResult,
    Interface, LiveTables, NodeState, PuntRecord, DEFAULT_PUNT_LIMIT, ICMP_REPLY_TTL,
};
pub use rpf::{rpf_check, RpfMode, RpfVerdict};

/// Handle of an ephemeral entry, unique across the whole simulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntryId(pub u64);

impl std::fmt::Display for EntryId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Where a table entry came from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Config,
    Ephemeral { entry_id: EntryId },
}

impl Origin {
    pub fn is_config(&self) -> bool {
        matches!(self, Origin::Config)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DataplaneError {
    #[error("duplicate FIB prefix {0}")]
    DuplicatePrefix(Prefix),
    #[error("filter {0} has no match fields")]
    EmptyMatch(u32),
    #[error("replication target {0} is not a multicast MAC")]
    UnicastReplicateMac(MacAddress),
    #[error("filter {0} redirects into a tunnel whose endpoints are equal")]
    DegenerateTunnel(u32),
}
