use serde::{Deserialize, Serialize};

use super::{DataplaneError, Origin};
use crate::netcore::{MacAddress, Packet, Prefix, TunnelSpec};

/// Match criteria of a captive filter. Every set field must match the
/// packet's outermost IPv4 header (and its transport header, when the
/// packet is not tunneled).
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatchSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src: Option<Prefix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst: Option<Prefix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_port: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_if: Option<String>,
}

impl MatchSpec {
    pub fn is_empty(&self) -> bool {
        self.src.is_none()
            && self.dst.is_none()
            && self.protocol.is_none()
            && self.dst_port.is_none()
            && self.in_if.is_none()
    }

    pub fn matches(&self, packet: &Packet, in_if: &str) -> bool {
        let outer = packet.outer();
        if let Some(src) = &self.src {
            if !src.contains(outer.src) {
                return false;
            }
        }
        if let Some(dst) = &self.dst {
            if !dst.contains(outer.dst) {
                return false;
            }
        }
        if let Some(proto) = self.protocol {
            if outer.protocol != proto {
                return false;
            }
        }
        if let Some(port) = self.dst_port {
            if packet.outer_transport().and_then(|t| t.dst_port()) != Some(port) {
                return false;
            }
        }
        if let Some(i) = &self.in_if {
            if i != in_if {
                return false;
            }
        }
        true
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    #[default]
    ForwardNormal,
    RedirectTunnel {
        tunnel: TunnelSpec,
    },
    ReplicateMac {
        dst_mac: MacAddress,
        out_if: String,
    },
    Drop,
    Punt,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FilterRule {
    pub id: u32,
    pub priority: i32,
    #[serde(rename = "match")]
    pub matches: MatchSpec,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Origin::is_config")]
    pub origin: Origin,
}

impl FilterRule {
    /// Checks the rule's own invariants; interface existence is checked by
    /// whoever owns the interface table.
    pub fn validate(&self) -> Result<(), DataplaneError> {
        if self.matches.is_empty() {
            return Err(DataplaneError::EmptyMatch(self.id));
        }
        match &self.action {
            Action::ReplicateMac { dst_mac, .. } if !dst_mac.is_multicast() => {
                Err(DataplaneError::UnicastReplicateMac(*dst_mac))
            }
            Action::RedirectTunnel { tunnel } => tunnel
                .validate()
                .map_err(|_| DataplaneError::DegenerateTunnel(self.id)),
            _ => Ok(()),
        }
    }

    /// Interfaces this rule refers to.
    pub fn interfaces(&self) -> impl Iterator<Item = &str> {
        let out = match &self.action {
            Action::ReplicateMac { out_if, .. } => Some(out_if.as_str()),
            _ => None,
        };
        self.matches.in_if.as_deref().into_iter().chain(out)
    }
}

/// First rule in table order whose match fields all hold.
pub fn first_match<'a>(rules: &'a [FilterRule], packet: &Packet, in_if: &str) -> Option<&'a FilterRule> {
    rules.iter().find(|r| r.matches.matches(packet, in_if))
}

/// Action of the first matching rule, `ForwardNormal` when none match.
/// `rules` must already be in evaluation order.
pub fn eval_filters(rules: &[FilterRule], packet: &Packet, in_if: &str) -> Action {
    first_match(rules, packet, in_if)
        .map(|r| r.action.clone())
        .unwrap_or_default()
}

/// Sorts rules into evaluation order: priority, then id.
pub fn sort_rules(rules: &mut [FilterRule]) {
    rules.sort_by_key(|r| (r.priority, r.id));
}
