use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::fib::{Fib, NextHop};
use super::filter::{eval_filters, Action, FilterRule};
use super::l2::MacTable;
use super::rpf::{rpf_check, RpfMode, RpfVerdict};
use crate::netcore::{
    decapsulate, decrement_ttl, encapsulate, header_bytes, is_tunnel_protocol, EthHeader, Expired,
    IpAddress, Ipv4Header, MacAddress, Packet, PacketUid, Prefix, TransportHeader, TunnelSpec,
    DEFAULT_OUTER_TTL, PROTO_ICMP,
};

/// Default number of header bytes a punt may carry to the control plane.
pub const DEFAULT_PUNT_LIMIT: usize = 128;

/// TTL for ICMP errors the node originates.
pub const ICMP_REPLY_TTL: u8 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Rpf,
    Ttl,
    NoRoute,
    Filter,
    DepthExceeded,
    NotAccepted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interface {
    pub name: String,
    pub mac: MacAddress,
    /// Address and on-link prefix, absent on switch ports.
    pub addr: Option<IpAddress>,
    pub prefix: Option<Prefix>,
}

/// Compiled tables the forwarding pipeline reads.
#[derive(Clone, Debug, Default)]
pub struct LiveTables {
    pub fib: Fib,
    /// In evaluation order.
    pub filters: Vec<FilterRule>,
    /// Tunnel endpoints this node terminates.
    pub tunnels: Vec<TunnelSpec>,
    pub accept_macs: BTreeMap<String, BTreeSet<MacAddress>>,
    pub rpf: BTreeMap<String, RpfMode>,
}

#[derive(Clone, Debug)]
pub struct NodeState {
    pub name: String,
    pub interfaces: Vec<Interface>,
    pub tables: LiveTables,
    pub punt_limit: usize,
    pub tunnel_ttl: u8,
}

impl NodeState {
    pub fn new(name: impl Into<String>, interfaces: Vec<Interface>) -> Self {
        NodeState {
            name: name.into(),
            interfaces,
            tables: LiveTables::default(),
            punt_limit: DEFAULT_PUNT_LIMIT,
            tunnel_ttl: DEFAULT_OUTER_TTL,
        }
    }

    pub fn interface(&self, name: &str) -> Option<&Interface> {
        self.interfaces.iter().find(|i| i.name == name)
    }

    pub fn has_interface(&self, name: &str) -> bool {
        self.interface(name).is_some()
    }

    pub fn is_local(&self, addr: IpAddress) -> bool {
        self.interfaces.iter().any(|i| i.addr == Some(addr))
    }

    pub fn rpf_mode(&self, in_if: &str) -> RpfMode {
        self.tables.rpf.get(in_if).copied().unwrap_or_default()
    }

    /// L2 acceptance state of one interface.
    pub fn mac_table(&self, if_name: &str) -> MacTable {
        MacTable {
            entries: BTreeMap::new(),
            accept_macs: self.tables.accept_macs.get(if_name).cloned().unwrap_or_default(),
        }
    }

    fn terminates(&self, outer: &Ipv4Header) -> bool {
        self.tables.tunnels.iter().any(|t| {
            t.local == outer.dst && t.remote == outer.src && t.mode.protocol() == outer.protocol
        })
    }

    fn reply_source(&self, in_if: &str) -> IpAddress {
        self.interface(in_if)
            .and_then(|i| i.addr)
            .or_else(|| self.interfaces.iter().find_map(|i| i.addr))
            .unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Emission {
    pub out_if: String,
    /// Address whose MAC the frame must be sent to. `None` when the packet
    /// already carries its final Ethernet header.
    pub next_hop: Option<IpAddress>,
    pub packet: Packet,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PuntRecord {
    pub uid: PacketUid,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DroppedPacket {
    pub packet: Packet,
    pub reason: DropReason,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ForwardResult {
    pub emissions: Vec<Emission>,
    pub punts: Vec<PuntRecord>,
    pub drops: Vec<DroppedPacket>,
    pub icmp_replies: Vec<Packet>,
}

impl ForwardResult {
    fn drop(&mut self, packet: Packet, reason: DropReason) {
        self.drops.push(DroppedPacket { packet, reason });
    }

    fn punt(&mut self, packet: &Packet, limit: usize) {
        self.punts.push(PuntRecord {
            uid: packet.uid,
            bytes: header_bytes(packet, limit),
        });
    }

    pub fn outcome_count(&self) -> usize {
        self.emissions.len() + self.punts.len() + self.drops.len() + self.icmp_replies.len()
    }
}

/// Runs one packet through a router: tunnel termination, RPF, TTL, captive
/// filters, then the FIB.
pub fn router_forward(
    node: &NodeState,
    mut packet: Packet,
    in_if: &str,
    mut next_uid: impl FnMut() -> PacketUid,
) -> ForwardResult {
    let mut res = ForwardResult::default();
    packet.eth = None;

    while node.is_local(packet.outer().dst) {
        if is_tunnel_protocol(packet.outer().protocol) && node.terminates(packet.outer()) {
            packet = match decapsulate(packet) {
                Ok(p) => p,
                Err(_) => unreachable!("tunnel protocol with a single header is not terminated"),
            };
        } else {
            res.punt(&packet, node.punt_limit);
            return res;
        }
    }

    if rpf_check(node.rpf_mode(in_if), &node.tables.fib, packet.outer().src, in_if) == RpfVerdict::Fail {
        res.drop(packet, DropReason::Rpf);
        return res;
    }

    let packet = match decrement_ttl(packet) {
        Ok(p) => p,
        Err(Expired(p)) => {
            if let Some(reply) = time_exceeded(&p, node.reply_source(in_if), next_uid()) {
                res.icmp_replies.push(reply);
            }
            res.drop(p, DropReason::Ttl);
            return res;
        }
    };

    match eval_filters(&node.tables.filters, &packet, in_if) {
        Action::ForwardNormal => route(node, packet, &mut res),
        Action::Drop => res.drop(packet, DropReason::Filter),
        Action::Punt => res.punt(&packet, node.punt_limit),
        Action::RedirectTunnel { tunnel } => match encapsulate(packet.clone(), &tunnel, node.tunnel_ttl) {
            Ok(p) => route(node, p, &mut res),
            Err(_) => res.drop(packet, DropReason::DepthExceeded),
        },
        Action::ReplicateMac { dst_mac, out_if } => {
            let src_mac = node.interface(&out_if).map(|i| i.mac).unwrap_or(dst_mac);
            let normal_if = node
                .tables
                .fib
                .lookup(packet.outer().dst)
                .and_then(|e| e.next_hop.out_if())
                .map(str::to_string);
            let mut mcast = if normal_if.as_deref() == Some(out_if.as_str()) {
                // The flooded group frame already reaches the normal next
                // hop on this segment.
                packet
            } else {
                let copy = packet.derive_copy(next_uid());
                route(node, packet, &mut res);
                copy
            };
            mcast.eth = Some(EthHeader { src: src_mac, dst: dst_mac });
            res.emissions.push(Emission {
                out_if,
                next_hop: None,
                packet: mcast,
            });
        }
    }
    res
}

/// Sends a packet the node itself generated: FIB only, no filters, RPF or
/// TTL decrement.
pub fn originate(node: &NodeState, packet: Packet) -> ForwardResult {
    let mut res = ForwardResult::default();
    route(node, packet, &mut res);
    res
}

fn route(node: &NodeState, packet: Packet, res: &mut ForwardResult) {
    let dst = packet.outer().dst;
    match node.tables.fib.lookup(dst).map(|e| &e.next_hop) {
        Some(NextHop::Via { neighbor, out_if }) => res.emissions.push(Emission {
            out_if: out_if.clone(),
            next_hop: Some(*neighbor),
            packet,
        }),
        Some(NextHop::Connected { out_if }) => res.emissions.push(Emission {
            out_if: out_if.clone(),
            next_hop: Some(dst),
            packet,
        }),
        Some(NextHop::Discard) | None => res.drop(packet, DropReason::NoRoute),
    }
}

/// ICMP TimeExceeded toward the expired packet's outermost source, quoting
/// its innermost header. Never generated for ICMP errors.
pub fn time_exceeded(expired: &Packet, from: IpAddress, uid: PacketUid) -> Option<Packet> {
    if expired.ip_stack().len() == 1
        && matches!(expired.transport, Some(TransportHeader::IcmpTimeExceeded { .. }))
    {
        return None;
    }
    let header = Ipv4Header {
        src: from,
        dst: expired.outer().src,
        ttl: ICMP_REPLY_TTL,
        protocol: PROTO_ICMP,
        id: 0,
    };
    Some(Packet::new(
        uid,
        header,
        Some(TransportHeader::IcmpTimeExceeded {
            original_header: *expired.inner(),
        }),
        Vec::new(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataplane::{FibEntry, MatchSpec, Origin};
    use crate::netcore::{TunnelMode, PROTO_IPIP, PROTO_TCP, TCP_ACK};

    fn ip(s: &str) -> IpAddress {
        s.parse().unwrap()
    }

    fn iface(name: &str, mac: u64, addr: &str, len: u8) -> Interface {
        let a = ip(addr);
        Interface {
            name: name.into(),
            mac: MacAddress(mac),
            addr: Some(a),
            prefix: Some(Prefix::truncating(a, len)),
        }
    }

    fn via(p: &str, n: &str, out: &str) -> FibEntry {
        FibEntry::new(
            p.parse().unwrap(),
            NextHop::Via {
                neighbor: ip(n),
                out_if: out.into(),
            },
        )
    }

    /// A transit router shaped like R2 of the redirect fixture.
    fn r2() -> NodeState {
        let mut n = NodeState::new(
            "R2",
            vec![
                iface("ge0", 0x0200_0000_0200, "192.0.2.2", 30),
                iface("ge1", 0x0200_0000_0201, "192.0.2.5", 30),
                iface("ge2", 0x0200_0000_0202, "192.0.2.9", 30),
            ],
        );
        n.tables.fib = Fib::from_entries([
            via("198.51.100.0/25", "192.0.2.1", "ge0"),
            via("203.0.113.0/25", "192.0.2.6", "ge1"),
            via("192.0.2.64/26", "192.0.2.10", "ge2"),
        ])
        .unwrap();
        n
    }

    fn flow_packet(ttl: u8) -> Packet {
        Packet::datagram(
            PacketUid(1),
            ip("198.51.100.10"),
            ip("203.0.113.80"),
            ttl,
            0,
            TransportHeader::Tcp { src_port: 40000, dst_port: 80, flags: TCP_ACK },
            b"GET /".to_vec(),
        )
    }

    fn uids() -> impl FnMut() -> PacketUid {
        let mut n = 1000;
        move || {
            n += 1;
            PacketUid(n)
        }
    }

    fn redirect_rule() -> FilterRule {
        FilterRule {
            id: 1,
            priority: 0,
            matches: MatchSpec {
                dst: Some("203.0.113.80/32".parse().unwrap()),
                protocol: Some(PROTO_TCP),
                in_if: Some("ge0".into()),
                ..Default::default()
            },
            action: Action::RedirectTunnel {
                tunnel: TunnelSpec::new(TunnelMode::IpIp, ip("192.0.2.9"), ip("192.0.2.66")).unwrap(),
            },
            origin: Origin::Config,
        }
    }

    #[test]
    fn plain_forwarding() {
        let res = router_forward(&r2(), flow_packet(64), "ge0", uids());
        assert_eq!(res.emissions.len(), 1);
        assert_eq!(res.emissions[0].out_if, "ge1");
        assert_eq!(res.emissions[0].next_hop, Some(ip("192.0.2.6")));
        assert_eq!(res.emissions[0].packet.outer().ttl, 63);
    }

    #[test]
    fn redirect_encapsulates_toward_aid() {
        let mut n = r2();
        n.tables.filters.push(redirect_rule());
        let res = router_forward(&n, flow_packet(64), "ge0", uids());
        assert_eq!(res.outcome_count(), 1);
        let e = &res.emissions[0];
        assert_eq!(e.out_if, "ge2");
        assert_eq!(e.packet.depth(), 2);
        assert_eq!(e.packet.outer().dst, ip("192.0.2.66"));
        assert_eq!(e.packet.outer().protocol, PROTO_IPIP);
        assert_eq!(e.packet.inner().src, ip("198.51.100.10"));
        assert_eq!(e.packet.inner().ttl, 63);
    }

    #[test]
    fn redirected_inner_equals_normal_forward() {
        let normal = router_forward(&r2(), flow_packet(64), "ge0", uids());
        let mut n = r2();
        n.tables.filters.push(redirect_rule());
        let red = router_forward(&n, flow_packet(64), "ge0", uids());
        let inner = decapsulate(red.emissions[0].packet.clone()).unwrap();
        assert_eq!(inner, normal.emissions[0].packet);
    }

    #[test]
    fn replicate_emits_normal_and_group_copy() {
        let mcast: MacAddress = "01:00:5e:7f:00:01".parse().unwrap();
        let mut n = r2();
        n.tables.filters.push(FilterRule {
            action: Action::ReplicateMac { dst_mac: mcast, out_if: "ge2".into() },
            ..redirect_rule()
        });
        let res = router_forward(&n, flow_packet(64), "ge0", uids());
        assert_eq!(res.emissions.len(), 2);
        let (normal, copy) = (&res.emissions[0], &res.emissions[1]);
        assert_eq!(normal.out_if, "ge1");
        assert_eq!(copy.out_if, "ge2");
        assert_eq!(copy.packet.eth.unwrap().dst, mcast);
        assert_eq!(copy.packet.lineage, Some(normal.packet.uid));
        assert_eq!(copy.packet.ip_stack(), normal.packet.ip_stack());
        assert_eq!(copy.packet.payload, normal.packet.payload);
    }

    #[test]
    fn replicate_on_normal_segment_sends_single_group_frame() {
        let mcast: MacAddress = "01:00:5e:7f:00:01".parse().unwrap();
        let mut n = r2();
        n.tables.filters.push(FilterRule {
            action: Action::ReplicateMac { dst_mac: mcast, out_if: "ge1".into() },
            ..redirect_rule()
        });
        let res = router_forward(&n, flow_packet(64), "ge0", uids());
        assert_eq!(res.emissions.len(), 1);
        assert_eq!(res.emissions[0].packet.uid, PacketUid(1));
        assert_eq!(res.emissions[0].packet.eth.unwrap().dst, mcast);
    }

    #[test]
    fn ttl_expiry_generates_time_exceeded() {
        let res = router_forward(&r2(), flow_packet(1), "ge0", uids());
        assert!(res.emissions.is_empty());
        assert_eq!(res.drops.len(), 1);
        assert_eq!(res.drops[0].reason, DropReason::Ttl);
        assert_eq!(res.icmp_replies.len(), 1);
        let reply = &res.icmp_replies[0];
        assert_eq!(reply.outer().src, ip("192.0.2.2"));
        assert_eq!(reply.outer().dst, ip("198.51.100.10"));
        assert_eq!(reply.outer().ttl, ICMP_REPLY_TTL);
        match reply.transport {
            Some(TransportHeader::IcmpTimeExceeded { original_header }) => {
                assert_eq!(original_header.dst, ip("203.0.113.80"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ttl_expires_before_redirect() {
        let mut n = r2();
        n.tables.filters.push(redirect_rule());
        let res = router_forward(&n, flow_packet(1), "ge0", uids());
        assert!(res.emissions.is_empty());
        assert_eq!(res.icmp_replies.len(), 1);
    }

    #[test]
    fn strict_rpf_drops() {
        let mut n = r2();
        n.tables.rpf.insert("ge2".into(), RpfMode::Strict);
        let res = router_forward(&n, flow_packet(64), "ge2", uids());
        assert_eq!(res.drops[0].reason, DropReason::Rpf);
    }

    #[test]
    fn no_route_is_a_drop() {
        let mut p = flow_packet(64);
        p.outer_mut().dst = ip("10.9.9.9");
        let res = router_forward(&r2(), p, "ge0", uids());
        assert_eq!(res.drops[0].reason, DropReason::NoRoute);
    }

    #[test]
    fn tunnel_termination_requires_endpoint() {
        let aid_side = TunnelSpec::new(TunnelMode::IpIp, ip("192.0.2.66"), ip("192.0.2.9")).unwrap();
        let back = encapsulate(flow_packet(10), &aid_side, 64).unwrap();

        // no endpoint: addressed to the router itself, so it is punted
        let res = router_forward(&r2(), back.clone(), "ge2", uids());
        assert_eq!(res.punts.len(), 1);
        assert!(res.punts[0].bytes.len() <= DEFAULT_PUNT_LIMIT);

        let mut n = r2();
        n.tables.tunnels.push(aid_side.reversed());
        let res = router_forward(&n, back, "ge2", uids());
        assert_eq!(res.emissions.len(), 1);
        assert_eq!(res.emissions[0].out_if, "ge1");
        assert_eq!(res.emissions[0].packet.depth(), 1);
        assert_eq!(res.emissions[0].packet.outer().ttl, 9);
    }

    #[test]
    fn punt_is_truncated() {
        let mut n = r2();
        n.punt_limit = 16;
        n.tables.filters.push(FilterRule { action: Action::Punt, ..redirect_rule() });
        let res = router_forward(&n, flow_packet(64), "ge0", uids());
        assert_eq!(res.punts[0].bytes.len(), 16);
    }

    #[test]
    fn depth_exceeded_is_a_drop() {
        let mut p = flow_packet(64);
        let t = TunnelSpec::new(TunnelMode::Gre, ip("10.0.0.1"), ip("10.0.0.2")).unwrap();
        for _ in 0..3 {
            p = encapsulate(p, &t, 64).unwrap();
        }
        let mut n = r2();
        n.tables.filters.push(FilterRule {
            matches: MatchSpec { in_if: Some("ge0".into()), ..Default::default() },
            ..redirect_rule()
        });
        n.tables.fib.insert(via("10.0.0.0/8", "192.0.2.6", "ge1")).unwrap();
        let res = router_forward(&n, p, "ge0", uids());
        assert_eq!(res.drops[0].reason, DropReason::DepthExceeded);
    }
}
