use std::collections::{BTreeMap, BTreeSet};

use crate::netcore::{MacAddress, Packet, PacketUid};

/// Learned MAC-to-port bindings plus the extra group addresses a router
/// interface has been told to accept.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MacTable {
    pub entries: BTreeMap<MacAddress, String>,
    pub accept_macs: BTreeSet<MacAddress>,
}

impl MacTable {
    pub fn learn(&mut self, mac: MacAddress, port: &str) {
        if !mac.is_multicast() {
            self.entries.insert(mac, port.to_string());
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum L2Verdict {
    Accept,
    Ignore,
}

/// Whether a router or host interface hands `frame` to its L3 engine.
/// Frames without an Ethernet header are accepted.
pub fn l2_accept(table: &MacTable, frame: &Packet, if_mac: MacAddress) -> L2Verdict {
    let Some(eth) = frame.eth else {
        return L2Verdict::Accept;
    };
    if eth.dst == if_mac || eth.dst.is_broadcast() || table.accept_macs.contains(&eth.dst) {
        L2Verdict::Accept
    } else {
        L2Verdict::Ignore
    }
}

/// Learning-switch forwarding. Known unicast goes out one port; unknown
/// unicast, multicast and broadcast flood every port but the ingress one.
/// The first flooded copy keeps the frame's uid, the rest get fresh uids
/// from `next_uid` and record the original as their lineage.
pub fn switch_forward(
    table: &mut MacTable,
    frame: Packet,
    in_port: &str,
    ports: &[String],
    mut next_uid: impl FnMut() -> PacketUid,
) -> Vec<(String, Packet)> {
    let Some(eth) = frame.eth else {
        return Vec::new();
    };
    table.learn(eth.src, in_port);
    if !eth.dst.is_multicast() {
        if let Some(port) = table.entries.get(&eth.dst) {
            if port == in_port {
                return Vec::new();
            }
            return vec![(port.clone(), frame)];
        }
    }
    let mut out = Vec::new();
    let mut original = Some(frame);
    for port in ports.iter().filter(|p| p.as_str() != in_port) {
        let copy = match original.take() {
            Some(f) => f,
            None => out
                .first()
                .map(|(_, f): &(String, Packet)| f.derive_copy(next_uid()))
                .expect("first copy already emitted"),
        };
        out.push((port.clone(), copy));
    }
    out
}
