//! Deterministic packet-level lab for transit-node traffic hijacking.
//!
//! Routers, switches and hosts exchange layered packets over latency-only
//! links. Attacks are staged as ephemeral forwarding state pushed through a
//! connector; detection runs on the resulting event traces, traceroutes and
//! state dumps.

pub mod control;
pub mod dataplane;
pub mod netcore;
pub mod scenarios;
pub mod simnet;

pub use dataplane::{Action, DropReason, EntryId, FibEntry, FilterRule, MatchSpec, NextHop, RpfMode};
pub use netcore::{IpAddress, MacAddress, Packet, PacketUid, Prefix, TunnelMode, TunnelSpec};
