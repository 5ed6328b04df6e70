use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataplane::{
    sort_rules, EntryId, Fib, FibEntry, FilterRule, LiveTables, NodeState, Origin, RpfMode,
};
use crate::netcore::{MacAddress, Prefix, TunnelSpec};

use super::ControlError;

/// Node role; drives audit strictness.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    #[default]
    Transit,
    Leaf,
    Peering,
}

/// Declarative per-router state, exactly as loaded.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigStore {
    pub fib: Vec<FibEntry>,
    pub filters: Vec<FilterRule>,
    pub tunnels: Vec<TunnelSpec>,
    pub rpf: BTreeMap<String, RpfMode>,
    pub accept_macs: BTreeMap<String, BTreeSet<MacAddress>>,
}

/// Things that can be injected at runtime.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryPayload {
    Fib(FibEntry),
    Filter(FilterRule),
    Tunnel(TunnelSpec),
    AcceptMac { interface: String, mac: MacAddress },
}

impl EntryPayload {
    pub(crate) fn tag_origin(&mut self, id: EntryId) {
        let origin = Origin::Ephemeral { entry_id: id };
        match self {
            EntryPayload::Fib(e) => e.origin = origin,
            EntryPayload::Filter(f) => f.origin = origin,
            EntryPayload::Tunnel(_) | EntryPayload::AcceptMac { .. } => {}
        }
    }
}

/// How an ephemeral entry got in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstallPath {
    #[default]
    Connector,
    Shell,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EphemeralEntry {
    pub entry_id: EntryId,
    pub payload: EntryPayload,
    pub installed_at: u64,
    pub via: InstallPath,
}

/// Runtime entries with no configuration-file form. Never persisted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EphemeralStore {
    pub entries: Vec<EphemeralEntry>,
}

impl EphemeralStore {
    pub fn get(&self, id: EntryId) -> Option<&EphemeralEntry> {
        self.entries.iter().find(|e| e.entry_id == id)
    }

    pub fn get_mut(&mut self, id: EntryId) -> Option<&mut EphemeralEntry> {
        self.entries.iter_mut().find(|e| e.entry_id == id)
    }

    pub fn remove(&mut self, id: EntryId) -> Option<EphemeralEntry> {
        let i = self.entries.iter().position(|e| e.entry_id == id)?;
        Some(self.entries.remove(i))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// An ephemeral FIB entry that displaced a configured prefix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FibConflict {
    pub prefix: Prefix,
    pub entry_id: EntryId,
}

/// A router with its split control state and the compiled tables its
/// forwarding pipeline uses.
#[derive(Clone, Debug)]
pub struct RouterNode {
    pub state: NodeState,
    pub config: ConfigStore,
    pub ephemeral: EphemeralStore,
    pub role: Role,
    pub connector_enabled: bool,
    /// Conflicts reported by the last compile.
    pub conflicts: Vec<FibConflict>,
}

impl RouterNode {
    /// Wraps a node and compiles its configuration. Fails on duplicate
    /// configured prefixes.
    pub fn new(state: NodeState, config: ConfigStore, role: Role) -> Result<Self, ControlError> {
        Fib::from_entries(config.fib.iter().cloned())
            .map_err(|e| ControlError::Validation(e.to_string()))?;
        let mut node = RouterNode {
            state,
            config,
            ephemeral: EphemeralStore::default(),
            role,
            connector_enabled: true,
            conflicts: Vec::new(),
        };
        compile_fib(&mut node);
        Ok(node)
    }

    pub fn name(&self) -> &str {
        &self.state.name
    }
}

/// Merges configuration and ephemeral entries into the live tables.
/// Ephemeral filters evaluate ahead of configured ones; an ephemeral FIB
/// entry replaces a configured one with the same prefix and the clash is
/// recorded in `node.conflicts`.
pub fn compile_fib(node: &mut RouterNode) -> &[FibConflict] {
    let (tables, conflicts) = merged_tables(&node.config, &node.ephemeral);
    node.state.tables = tables;
    node.conflicts = conflicts;
    &node.conflicts
}

pub(crate) fn merged_tables(config: &ConfigStore, eph: &EphemeralStore) -> (LiveTables, Vec<FibConflict>) {
    let mut fib_by_prefix: BTreeMap<Prefix, FibEntry> =
        config.fib.iter().map(|e| (e.prefix, e.clone())).collect();
    let mut conflicts = Vec::new();
    let mut eph_filters = Vec::new();
    let mut tunnels = config.tunnels.clone();
    let mut accept_macs = config.accept_macs.clone();

    for entry in &eph.entries {
        match &entry.payload {
            EntryPayload::Fib(f) => {
                if let Some(prev) = fib_by_prefix.insert(f.prefix, f.clone()) {
                    if prev.origin.is_config() {
                        conflicts.push(FibConflict {
                            prefix: f.prefix,
                            entry_id: entry.entry_id,
                        });
                    }
                }
            }
            EntryPayload::Filter(r) => eph_filters.push(r.clone()),
            EntryPayload::Tunnel(t) => tunnels.push(*t),
            EntryPayload::AcceptMac { interface, mac } => {
                accept_macs.entry(interface.clone()).or_default().insert(*mac);
            }
        }
    }

    let mut cfg_filters = config.filters.clone();
    sort_rules(&mut eph_filters);
    sort_rules(&mut cfg_filters);
    eph_filters.extend(cfg_filters);

    let fib = Fib::from_entries(fib_by_prefix.into_values()).expect("prefixes are unique by construction");
    (
        LiveTables {
            fib,
            filters: eph_filters,
            tunnels,
            accept_macs,
            rpf: config.rpf.clone(),
        },
        conflicts,
    )
}
