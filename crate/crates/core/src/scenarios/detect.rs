use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::control::{audit_node, AuditReport};
use crate::netcore::{IpAddress, Packet, PacketUid};
use crate::simnet::{EventKind, EventTrace, Node, Topology};

/// Identifies a flow by its innermost header: `src>dst/proto[:port]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowKey {
    pub src: IpAddress,
    pub dst: IpAddress,
    pub protocol: u8,
    pub dst_port: Option<u16>,
}

impl FlowKey {
    pub fn of(packet: &Packet) -> FlowKey {
        let h = packet.inner();
        FlowKey {
            src: h.src,
            dst: h.dst,
            protocol: h.protocol,
            dst_port: packet.transport.and_then(|t| t.dst_port()),
        }
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}>{}/{}", self.src, self.dst, self.protocol)?;
        if let Some(p) = self.dst_port {
            write!(f, ":{p}")?;
        }
        Ok(())
    }
}

impl FromStr for FlowKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("expected `src>dst/proto[:port]`, got `{s}`");
        let (src, rest) = s.split_once('>').ok_or_else(bad)?;
        let (dst, rest) = rest.split_once('/').ok_or_else(bad)?;
        let (proto, port) = match rest.split_once(':') {
            Some((p, port)) => (p, Some(port.parse().map_err(|_| bad())?)),
            None => (rest, None),
        };
        Ok(FlowKey {
            src: src.parse().map_err(|_| bad())?,
            dst: dst.parse().map_err(|_| bad())?,
            protocol: proto.parse().map_err(|_| bad())?,
            dst_port: port,
        })
    }
}

impl Serialize for FlowKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FlowKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-packet delivery delays of `flow`, keyed by the original packet uid.
/// A copy counts once: the first delivery anywhere over its lineage.
pub fn delivery_delays(trace: &EventTrace, flow: &FlowKey) -> BTreeMap<PacketUid, u64> {
    let mut sent: BTreeMap<PacketUid, u64> = BTreeMap::new();
    let mut delays = BTreeMap::new();
    for e in trace.iter() {
        match &e.kind {
            EventKind::PacketEmit { packet, .. } if packet.lineage.is_none() => {
                sent.entry(packet.uid).or_insert(e.time);
            }
            EventKind::AppDeliver { packet, .. } if FlowKey::of(packet) == *flow && packet.depth() == 1 => {
                let root = packet.lineage_root();
                if let Some(t0) = sent.get(&root) {
                    delays.entry(root).or_insert(e.time - t0);
                }
            }
            _ => {}
        }
    }
    delays
}

/// The flow with the most deliveries in `trace`.
pub fn dominant_flow(trace: &EventTrace) -> Option<FlowKey> {
    let mut counts: BTreeMap<FlowKey, usize> = BTreeMap::new();
    for e in trace.iter() {
        if let EventKind::AppDeliver { packet, .. } = &e.kind {
            *counts.entry(FlowKey::of(packet)).or_default() += 1;
        }
    }
    let best = counts.values().copied().max()?;
    counts.into_iter().find(|(_, n)| *n == best).map(|(k, _)| k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub flow: FlowKey,
    pub baseline_packets: usize,
    pub suspect_packets: usize,
    pub baseline_mean_us: f64,
    pub suspect_mean_us: f64,
    pub delta_us: f64,
    pub threshold_factor: f64,
    pub flagged: bool,
}

fn mean(d: &BTreeMap<PacketUid, u64>) -> f64 {
    d.values().sum::<u64>() as f64 / d.len() as f64
}

/// Compares mean per-packet delivery delay of `flow` between two runs.
/// Flags when suspect/baseline exceeds `threshold_factor`.
pub fn detect_latency_shift(
    baseline: &EventTrace,
    suspect: &EventTrace,
    flow: &FlowKey,
    threshold_factor: f64,
) -> Result<LatencyReport, ScenarioError> {
    let b = delivery_delays(baseline, flow);
    let s = delivery_delays(suspect, flow);
    if b.is_empty() || s.is_empty() {
        return Err(ScenarioError::FlowAbsent(*flow));
    }
    let (bm, sm) = (mean(&b), mean(&s));
    Ok(LatencyReport {
        flow: *flow,
        baseline_packets: b.len(),
        suspect_packets: s.len(),
        baseline_mean_us: bm,
        suspect_mean_us: sm,
        delta_us: sm - bm,
        threshold_factor,
        flagged: bm > 0.0 && sm / bm > threshold_factor || bm == 0.0 && sm > 0.0,
    })
}

/// Audits every node. Routers with anomalies come first, worst class
/// first, then by name; switches and hosts report clean.
pub fn fleet_audit(topology: &Topology) -> Vec<AuditReport> {
    let mut reports: Vec<AuditReport> = topology
        .nodes
        .iter()
        .map(|(name, n)| match n {
            Node::Router(r) => audit_node(r),
            _ => AuditReport {
                node: name.clone(),
                anomalies: Vec::new(),
                summary: BTreeMap::new(),
            },
        })
        .collect();
    reports.sort_by(|a, b| {
        b.max_severity()
            .cmp(&a.max_severity())
            .then(b.anomalies.len().cmp(&a.anomalies.len()))
            .then_with(|| a.node.cmp(&b.node))
    });
    reports
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_key_text() {
        let k: FlowKey = "198.51.100.10>203.0.113.80/6:80".parse().unwrap();
        assert_eq!(k.protocol, 6);
        assert_eq!(k.dst_port, Some(80));
        assert_eq!(k.to_string(), "198.51.100.10>203.0.113.80/6:80");
        let icmp: FlowKey = "1.2.3.4>5.6.7.8/1".parse().unwrap();
        assert_eq!(icmp.dst_port, None);
        assert!("1.2.3.4/6".parse::<FlowKey>().is_err());
    }

    #[test]
    fn empty_traces_have_no_flow() {
        let t = EventTrace::default();
        assert!(dominant_flow(&t).is_none());
        let k: FlowKey = "1.2.3.4>5.6.7.8/1".parse().unwrap();
        assert!(matches!(detect_latency_shift(&t, &t, &k, 1.5), Err(ScenarioError::FlowAbsent(_))));
    }
}
