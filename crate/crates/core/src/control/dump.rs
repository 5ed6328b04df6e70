use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataplane::{sort_rules, EntryId, FibEntry, FilterRule, Origin, RpfMode};
use crate::netcore::{MacAddress, TunnelSpec};

use super::store::{EntryPayload, Role, RouterNode};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TunnelRecord {
    #[serde(flatten)]
    pub tunnel: TunnelSpec,
    #[serde(default, skip_serializing_if = "Origin::is_config")]
    pub origin: Origin,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptMacRecord {
    pub interface: String,
    pub mac: MacAddress,
    #[serde(default, skip_serializing_if = "Origin::is_config")]
    pub origin: Origin,
}

/// Structured form of a config or live dump. Lists are in canonical order:
/// FIB by prefix, filters by (priority, id), the rest by value.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDump {
    pub node: String,
    pub role: Role,
    pub fib: Vec<FibEntry>,
    pub filters: Vec<FilterRule>,
    pub tunnels: Vec<TunnelRecord>,
    pub accept_macs: Vec<AcceptMacRecord>,
    pub rpf: BTreeMap<String, RpfMode>,
}

impl NodeDump {
    fn canonicalize(mut self) -> Self {
        self.fib.sort_by_key(|e| (e.prefix, e.origin));
        sort_rules(&mut self.filters);
        self.tunnels.sort_by_key(|t| (t.tunnel.local, t.tunnel.remote, t.origin));
        self.accept_macs
            .sort_by(|a, b| (&a.interface, a.mac, a.origin).cmp(&(&b.interface, b.mac, b.origin)));
        self
    }

    /// Canonical JSON text: sorted keys, two-space indent, trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("dump is always serializable");
        let mut s = serde_json::to_string_pretty(&sort_keys(value)).expect("value serializes");
        s.push('\n');
        s
    }
}

fn sort_keys(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let sorted: BTreeMap<String, Value> = map.into_iter().map(|(k, v)| (k, sort_keys(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

pub fn config_view(node: &RouterNode) -> NodeDump {
    let c = &node.config;
    NodeDump {
        node: node.name().to_string(),
        role: node.role,
        fib: c.fib.clone(),
        filters: c.filters.clone(),
        tunnels: c
            .tunnels
            .iter()
            .map(|t| TunnelRecord {
                tunnel: *t,
                origin: Origin::Config,
            })
            .collect(),
        accept_macs: c
            .accept_macs
            .iter()
            .flat_map(|(i, macs)| {
                macs.iter().map(move |m| AcceptMacRecord {
                    interface: i.clone(),
                    mac: *m,
                    origin: Origin::Config,
                })
            })
            .collect(),
        rpf: c.rpf.clone(),
    }
    .canonicalize()
}

/// Compiled view: configuration merged with ephemeral entries, each
/// ephemeral item tagged with its entry id.
pub fn live_view(node: &RouterNode) -> NodeDump {
    let mut dump = config_view(node);
    let tables = &node.state.tables;
    dump.fib = tables.fib.entries().to_vec();
    dump.filters = tables.filters.clone();
    for e in &node.ephemeral.entries {
        let origin = Origin::Ephemeral { entry_id: e.entry_id };
        match &e.payload {
            EntryPayload::Tunnel(t) => dump.tunnels.push(TunnelRecord { tunnel: *t, origin }),
            EntryPayload::AcceptMac { interface, mac } => dump.accept_macs.push(AcceptMacRecord {
                interface: interface.clone(),
                mac: *mac,
                origin,
            }),
            EntryPayload::Fib(_) | EntryPayload::Filter(_) => {}
        }
    }
    dump.canonicalize()
}

/// Configuration as an operator's config monitoring sees it.
pub fn dump_config(node: &RouterNode) -> String {
    config_view(node).to_canonical_json()
}

/// What the forwarding plane actually runs.
pub fn dump_live(node: &RouterNode) -> String {
    live_view(node).to_canonical_json()
}

/// Entry id carried by a dumped item's origin, if ephemeral.
pub fn ephemeral_id(origin: &Origin) -> Option<EntryId> {
    match origin {
        Origin::Ephemeral { entry_id } => Some(*entry_id),
        Origin::Config => None,
    }
}
