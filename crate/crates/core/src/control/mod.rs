//! Split control state: configured vs ephemeral stores, the connector that
//! injects ephemeral entries, compiled-table reconciliation, dumps and the
//! forwarding-state audit.

mod audit;
mod connector;
mod dump;
mod store;

#[cfg(test)]
mod tests;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::dataplane::EntryId;

pub use audit::{audit_node, Anomaly, AnomalyOrigin, AuditReport, NextHopClass};
pub use connector::{
    connector_apply, controller_fanout, handle_wire_line, serve_session, update_filter_match,
    validate_payload, CommandPayload, ControlTarget, FlowModCommand, InjectOp, NodeOutcome, Verb,
};
pub use dump::{config_view, dump_config, dump_live, live_view, AcceptMacRecord, NodeDump, TunnelRecord};
pub use store::{
    compile_fib, ConfigStore, EntryPayload, EphemeralEntry, EphemeralStore, FibConflict, InstallPath,
    Role, RouterNode,
};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum ControlError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("`{0}` is not a router")]
    NotARouter(String),
    #[error("connector disabled on `{0}`")]
    ConnectorDisabled(String),
    #[error("{0}")]
    Validation(String),
    #[error("unknown entry {0}")]
    UnknownEntry(EntryId),
}

impl ControlError {
    /// Short machine-readable code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            ControlError::UnknownNode(_) => "unknown_node",
            ControlError::NotARouter(_) => "not_a_router",
            ControlError::ConnectorDisabled(_) => "connector_disabled",
            ControlError::Validation(_) => "validation",
            ControlError::UnknownEntry(_) => "unknown_entry",
        }
    }
}

/// A bare set of routers with a connector in front, no simulation attached.
#[derive(Clone, Debug, Default)]
pub struct Fleet {
    pub routers: BTreeMap<String, RouterNode>,
    pub now: u64,
    pub injections: Vec<(String, InjectOp, EphemeralEntry)>,
    next_entry: u64,
}

impl Fleet {
    pub fn new<I: IntoIterator<Item = RouterNode>>(routers: I) -> Self {
        Fleet {
            routers: routers.into_iter().map(|r| (r.name().to_string(), r)).collect(),
            ..Default::default()
        }
    }
}

impl ControlTarget for Fleet {
    fn router_mut(&mut self, node: &str) -> Result<&mut RouterNode, ControlError> {
        self.routers
            .get_mut(node)
            .ok_or_else(|| ControlError::UnknownNode(node.to_string()))
    }

    fn router_names(&self) -> Vec<String> {
        self.routers.keys().cloned().collect()
    }

    fn allocate_entry_id(&mut self) -> EntryId {
        self.next_entry += 1;
        EntryId(self.next_entry)
    }

    fn now(&self) -> u64 {
        self.now
    }

    fn record_inject(&mut self, node: &str, op: InjectOp, entry: &EphemeralEntry) {
        self.injections.push((node.to_string(), op, entry.clone()));
    }
}
