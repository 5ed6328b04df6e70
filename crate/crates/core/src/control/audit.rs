use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataplane::{Action, EntryId, FilterRule, Origin};

use super::dump::{config_view, ephemeral_id, live_view};
use super::store::{Role, RouterNode};

/// Forwarding-state class an anomaly falls into, from most to least
/// suspicious.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NextHopClass {
    Tunnel,
    MulticastMac,
    PolicyRoute,
    Other,
}

impl NextHopClass {
    /// Higher is worse.
    pub fn severity(self) -> u8 {
        match self {
            NextHopClass::Tunnel => 3,
            NextHopClass::MulticastMac => 2,
            NextHopClass::PolicyRoute => 1,
            NextHopClass::Other => 0,
        }
    }

    fn of_filter(rule: &FilterRule) -> Self {
        match rule.action {
            Action::RedirectTunnel { .. } => NextHopClass::Tunnel,
            Action::ReplicateMac { .. } => NextHopClass::MulticastMac,
            _ => NextHopClass::PolicyRoute,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnomalyOrigin {
    /// Live entry with no configuration counterpart.
    Ephemeral,
    /// Live entry that displaced a configured one.
    ConfigMismatch,
    /// Configured, but a tunnel or group-MAC redirect on a transit node.
    UnexpectedForRole,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anomaly {
    pub entry: Value,
    pub next_hop_class: NextHopClass,
    pub origin: AnomalyOrigin,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entry_id: Option<EntryId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub node: String,
    pub anomalies: Vec<Anomaly>,
    pub summary: BTreeMap<NextHopClass, usize>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.anomalies.is_empty()
    }

    pub fn max_severity(&self) -> Option<u8> {
        self.anomalies.iter().map(|a| a.next_hop_class.severity()).max()
    }
}

/// Diffs the live view against the configured view and classifies every
/// live-only entry. On transit nodes, configured tunnel redirects and
/// group-MAC replication are flagged too.
pub fn audit_node(node: &RouterNode) -> AuditReport {
    let config = config_view(node);
    let live = live_view(node);
    let mut anomalies = Vec::new();

    let cfg_prefixes: Vec<_> = config.fib.iter().map(|e| e.prefix).collect();
    for e in live.fib.iter().filter(|e| !config.fib.contains(e)) {
        let origin = if cfg_prefixes.contains(&e.prefix) {
            AnomalyOrigin::ConfigMismatch
        } else {
            AnomalyOrigin::Ephemeral
        };
        anomalies.push(anomaly(e, NextHopClass::Other, origin, &e.origin));
    }

    let cfg_ids: Vec<_> = config.filters.iter().map(|f| f.id).collect();
    for f in &live.filters {
        let class = NextHopClass::of_filter(f);
        if !config.filters.contains(f) {
            let origin = if cfg_ids.contains(&f.id) {
                AnomalyOrigin::ConfigMismatch
            } else {
                AnomalyOrigin::Ephemeral
            };
            anomalies.push(anomaly(f, class, origin, &f.origin));
        } else if node.role == Role::Transit && class != NextHopClass::PolicyRoute {
            anomalies.push(anomaly(f, class, AnomalyOrigin::UnexpectedForRole, &f.origin));
        }
    }

    for t in &live.tunnels {
        if !config.tunnels.contains(t) {
            anomalies.push(anomaly(t, NextHopClass::Tunnel, AnomalyOrigin::Ephemeral, &t.origin));
        } else if node.role == Role::Transit {
            anomalies.push(anomaly(t, NextHopClass::Tunnel, AnomalyOrigin::UnexpectedForRole, &t.origin));
        }
    }

    for m in live.accept_macs.iter().filter(|m| !config.accept_macs.contains(m)) {
        anomalies.push(anomaly(m, NextHopClass::Other, AnomalyOrigin::Ephemeral, &m.origin));
    }

    let mut summary = BTreeMap::new();
    for a in &anomalies {
        *summary.entry(a.next_hop_class).or_insert(0) += 1;
    }
    AuditReport {
        node: node.name().to_string(),
        anomalies,
        summary,
    }
}

fn anomaly<T: Serialize>(item: &T, class: NextHopClass, origin: AnomalyOrigin, o: &Origin) -> Anomaly {
    Anomaly {
        entry: serde_json::to_value(item).expect("entries serialize"),
        next_hop_class: class,
        origin,
        entry_id: ephemeral_id(o),
    }
}
