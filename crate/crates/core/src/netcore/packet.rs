//! Layered packets, tunnel encapsulation and TTL handling.

use serde::{Deserialize, Serialize};

use super::addr::{IpAddress, MacAddress};
use super::NetError;

pub const PROTO_ICMP: u8 = 1;
pub const PROTO_IPIP: u8 = 4;
pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;
pub const PROTO_GRE: u8 = 47;

/// Maximum number of stacked IPv4 headers. A packet that would exceed this
/// is caught in a tunnel loop.
pub const MAX_ENCAP_DEPTH: usize = 4;

/// Default TTL for freshly pushed outer headers.
pub const DEFAULT_OUTER_TTL: u8 = 64;

pub const TCP_SYN: u8 = 0x02;
pub const TCP_RST: u8 = 0x04;
pub const TCP_PSH: u8 = 0x08;
pub const TCP_ACK: u8 = 0x10;

pub fn is_tunnel_protocol(protocol: u8) -> bool {
    protocol == PROTO_IPIP || protocol == PROTO_GRE
}

/// Simulator-wide packet identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PacketUid(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EthHeader {
    pub src: MacAddress,
    pub dst: MacAddress,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ipv4Header {
    pub src: IpAddress,
    pub dst: IpAddress,
    pub ttl: u8,
    pub protocol: u8,
    /// Flow disambiguation tag; traceroute uses it to match replies to probes.
    pub id: u16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportHeader {
    Tcp { src_port: u16, dst_port: u16, flags: u8 },
    Udp { src_port: u16, dst_port: u16 },
    IcmpEcho { seq: u16 },
    IcmpEchoReply { seq: u16 },
    IcmpTimeExceeded { original_header: Ipv4Header },
}

impl TransportHeader {
    pub fn protocol(&self) -> u8 {
        match self {
            TransportHeader::Tcp { .. } => PROTO_TCP,
            TransportHeader::Udp { .. } => PROTO_UDP,
            _ => PROTO_ICMP,
        }
    }

    pub fn dst_port(&self) -> Option<u16> {
        match *self {
            TransportHeader::Tcp { dst_port, .. } | TransportHeader::Udp { dst_port, .. } => {
                Some(dst_port)
            }
            _ => None,
        }
    }

    fn wire_len(&self) -> usize {
        match self {
            TransportHeader::Tcp { .. } => 20,
            TransportHeader::Udp { .. } => 8,
            TransportHeader::IcmpEcho { .. } | TransportHeader::IcmpEchoReply { .. } => 8,
            TransportHeader::IcmpTimeExceeded { .. } => 8 + IPV4_LEN,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TunnelMode {
    IpIp,
    Gre,
}

impl TunnelMode {
    pub fn protocol(self) -> u8 {
        match self {
            TunnelMode::IpIp => PROTO_IPIP,
            TunnelMode::Gre => PROTO_GRE,
        }
    }
}

/// One end of a point-to-point IP tunnel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TunnelSpec {
    pub mode: TunnelMode,
    pub local: IpAddress,
    pub remote: IpAddress,
}

impl TunnelSpec {
    pub fn new(mode: TunnelMode, local: IpAddress, remote: IpAddress) -> Result<Self, NetError> {
        let t = TunnelSpec {
            mode,
            local,
            remote,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.local == self.remote {
            return Err(NetError::DegenerateTunnel(self.local));
        }
        Ok(())
    }

    /// The same tunnel seen from the other end.
    pub fn reversed(&self) -> TunnelSpec {
        TunnelSpec {
            mode: self.mode,
            local: self.remote,
            remote: self.local,
        }
    }
}

/// A frame: optional Ethernet header, one or more IPv4 headers (outermost
/// first), optional transport header belonging to the innermost IPv4 header,
/// and an opaque payload.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub uid: PacketUid,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lineage: Option<PacketUid>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eth: Option<EthHeader>,
    ip_stack: Vec<Ipv4Header>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub transport: Option<TransportHeader>,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
}

/// Signal returned by [`decrement_ttl`] when the outer TTL runs out. Carries
/// the packet so the caller can build a TimeExceeded reply.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Expired(pub Packet);

impl Packet {
    pub fn new(
        uid: PacketUid,
        header: Ipv4Header,
        transport: Option<TransportHeader>,
        payload: Vec<u8>,
    ) -> Self {
        Packet {
            uid,
            lineage: None,
            eth: None,
            ip_stack: vec![header],
            transport,
            payload,
        }
    }

    /// Builds a packet from an explicit header stack. Fails on an empty or
    /// over-deep stack.
    pub fn from_stack(
        uid: PacketUid,
        ip_stack: Vec<Ipv4Header>,
        transport: Option<TransportHeader>,
        payload: Vec<u8>,
    ) -> Result<Self, NetError> {
        if ip_stack.is_empty() {
            return Err(NetError::EmptyStack);
        }
        if ip_stack.len() > MAX_ENCAP_DEPTH {
            return Err(NetError::DepthExceeded);
        }
        Ok(Packet {
            uid,
            lineage: None,
            eth: None,
            ip_stack,
            transport,
            payload,
        })
    }

    /// Convenience constructor: the protocol field follows the transport header.
    pub fn datagram(
        uid: PacketUid,
        src: IpAddress,
        dst: IpAddress,
        ttl: u8,
        id: u16,
        transport: TransportHeader,
        payload: Vec<u8>,
    ) -> Self {
        let header = Ipv4Header {
            src,
            dst,
            ttl,
            protocol: transport.protocol(),
            id,
        };
        Packet::new(uid, header, Some(transport), payload)
    }

    pub fn ip_stack(&self) -> &[Ipv4Header] {
        &self.ip_stack
    }

    pub fn outer(&self) -> &Ipv4Header {
        &self.ip_stack[0]
    }

    pub fn outer_mut(&mut self) -> &mut Ipv4Header {
        &mut self.ip_stack[0]
    }

    pub fn inner(&self) -> &Ipv4Header {
        self.ip_stack.last().expect("ip_stack is never empty")
    }

    pub fn depth(&self) -> usize {
        self.ip_stack.len()
    }

    /// Transport header visible at the outermost layer; `None` while the
    /// packet is tunneled.
    pub fn outer_transport(&self) -> Option<&TransportHeader> {
        if self.ip_stack.len() == 1 {
            self.transport.as_ref()
        } else {
            None
        }
    }

    /// The uid that ties every copy of this packet together.
    pub fn lineage_root(&self) -> PacketUid {
        self.lineage.unwrap_or(self.uid)
    }

    /// A byte-identical copy with a fresh uid that records this packet as its
    /// ancestor.
    pub fn derive_copy(&self, uid: PacketUid) -> Packet {
        let mut p = self.clone();
        p.lineage = Some(self.lineage_root());
        p.uid = uid;
        p
    }

    /// Serialized length of everything except the payload.
    pub fn header_len(&self) -> usize {
        let eth = if self.eth.is_some() { ETH_LEN } else { 0 };
        let ip: usize = self
            .ip_stack
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let shim = i + 1 < self.ip_stack.len() && h.protocol == PROTO_GRE;
                IPV4_LEN + if shim { GRE_LEN } else { 0 }
            })
            .sum();
        eth + ip + self.transport.map_or(0, |t| t.wire_len())
    }

    pub fn wire_len(&self) -> usize {
        self.header_len() + self.payload.len()
    }

    /// Canonical serialization: Ethernet, IPv4 stack (with a 4-byte GRE shim
    /// after each GRE outer header), transport, payload. Big-endian, no
    /// checksums. Only meaningful inside this simulator.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        if let Some(eth) = &self.eth {
            out.extend_from_slice(&eth.dst.octets());
            out.extend_from_slice(&eth.src.octets());
            out.extend_from_slice(&0x0800u16.to_be_bytes());
        }
        let mut remaining = self.wire_len() - out.len();
        let last = self.ip_stack.len() - 1;
        for (i, h) in self.ip_stack.iter().enumerate() {
            write_ipv4(&mut out, h, remaining);
            remaining -= IPV4_LEN;
            if i < last && h.protocol == PROTO_GRE {
                out.extend_from_slice(&[0, 0, 0x08, 0x00]);
                remaining -= GRE_LEN;
            }
        }
        if let Some(t) = &self.transport {
            write_transport(&mut out, t, self.payload.len());
        }
        out.extend_from_slice(&self.payload);
        out
    }
}

const ETH_LEN: usize = 14;
const IPV4_LEN: usize = 20;
const GRE_LEN: usize = 4;

fn write_ipv4(out: &mut Vec<u8>, h: &Ipv4Header, total: usize) {
    out.push(0x45);
    out.push(0);
    out.extend_from_slice(&(total.min(usize::from(u16::MAX)) as u16).to_be_bytes());
    out.extend_from_slice(&h.id.to_be_bytes());
    out.extend_from_slice(&[0, 0]);
    out.push(h.ttl);
    out.push(h.protocol);
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&h.src.octets());
    out.extend_from_slice(&h.dst.octets());
}

fn write_transport(out: &mut Vec<u8>, t: &TransportHeader, payload_len: usize) {
    match *t {
        TransportHeader::Tcp {
            src_port,
            dst_port,
            flags,
        } => {
            out.extend_from_slice(&src_port.to_be_bytes());
            out.extend_from_slice(&dst_port.to_be_bytes());
            out.extend_from_slice(&[0; 8]);
            out.push(0x50);
            out.push(flags);
            out.extend_from_slice(&[0; 6]);
        }
        TransportHeader::Udp { src_port, dst_port } => {
            out.extend_from_slice(&src_port.to_be_bytes());
            out.extend_from_slice(&dst_port.to_be_bytes());
            let len = (8 + payload_len).min(usize::from(u16::MAX)) as u16;
            out.extend_from_slice(&len.to_be_bytes());
            out.extend_from_slice(&[0, 0]);
        }
        TransportHeader::IcmpEcho { seq } | TransportHeader::IcmpEchoReply { seq } => {
            let ty = if matches!(t, TransportHeader::IcmpEcho { .. }) { 8 } else { 0 };
            out.extend_from_slice(&[ty, 0, 0, 0, 0, 0]);
            out.extend_from_slice(&seq.to_be_bytes());
        }
        TransportHeader::IcmpTimeExceeded { original_header } => {
            out.extend_from_slice(&[11, 0, 0, 0, 0, 0, 0, 0]);
            write_ipv4(out, &original_header, IPV4_LEN);
        }
    }
}

/// Decrements the outermost TTL. Inner headers are never touched.
pub fn decrement_ttl(mut packet: Packet) -> Result<Packet, Expired> {
    let outer = packet.outer_mut();
    if outer.ttl <= 1 {
        return Err(Expired(packet));
    }
    outer.ttl -= 1;
    Ok(packet)
}

/// Pushes a new outermost header addressed from `tunnel.local` to
/// `tunnel.remote`. The inner TTL is not copied outward.
pub fn encapsulate(mut packet: Packet, tunnel: &TunnelSpec, outer_ttl: u8) -> Result<Packet, NetError> {
    if packet.ip_stack.len() >= MAX_ENCAP_DEPTH {
        return Err(NetError::DepthExceeded);
    }
    let outer = Ipv4Header {
        src: tunnel.local,
        dst: tunnel.remote,
        ttl: outer_ttl,
        protocol: tunnel.mode.protocol(),
        id: packet.outer().id,
    };
    packet.ip_stack.insert(0, outer);
    Ok(packet)
}

/// Pops the outermost header of an IP-in-IP or GRE packet.
pub fn decapsulate(mut packet: Packet) -> Result<Packet, NetError> {
    if packet.ip_stack.len() < 2 || !is_tunnel_protocol(packet.outer().protocol) {
        return Err(NetError::NotEncapsulated);
    }
    packet.ip_stack.remove(0);
    Ok(packet)
}

/// First `limit` bytes of the canonical serialization. This is all the
/// control plane ever sees of a punted packet.
pub fn header_bytes(packet: &Packet, limit: usize) -> Vec<u8> {
    let mut bytes = packet.to_bytes();
    bytes.truncate(limit);
    bytes
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ip(s: &str) -> IpAddress {
        s.parse().unwrap()
    }

    fn tcp(ttl: u8, payload: Vec<u8>) -> Packet {
        Packet::datagram(
            PacketUid(1),
            ip("198.51.100.10"),
            ip("203.0.113.80"),
            ttl,
            7,
            TransportHeader::Tcp {
                src_port: 40000,
                dst_port: 80,
                flags: TCP_PSH | TCP_ACK,
            },
            payload,
        )
    }

    fn tun(mode: TunnelMode) -> TunnelSpec {
        TunnelSpec::new(mode, ip("192.0.2.9"), ip("192.0.2.66")).unwrap()
    }

    #[test]
    fn ttl_decrements_outer_only() {
        let p = decrement_ttl(tcp(64, vec![])).unwrap();
        assert_eq!(p.outer().ttl, 63);

        assert!(decrement_ttl(tcp(1, vec![])).is_err());

        let mut inner = tcp(5, vec![]);
        inner.outer_mut().ttl = 5;
        let enc = encapsulate(inner, &tun(TunnelMode::IpIp), 10).unwrap();
        let dec = decrement_ttl(enc).unwrap();
        assert_eq!(dec.ip_stack()[0].ttl, 9);
        assert_eq!(dec.ip_stack()[1].ttl, 5);
    }

    #[test]
    fn encapsulate_pushes_outer_header() {
        let p = tcp(64, b"GET /".to_vec());
        let e = encapsulate(p.clone(), &tun(TunnelMode::IpIp), 64).unwrap();
        assert_eq!(e.depth(), 2);
        assert_eq!(e.outer().src, ip("192.0.2.9"));
        assert_eq!(e.outer().dst, ip("192.0.2.66"));
        assert_eq!(e.outer().protocol, PROTO_IPIP);
        assert_eq!(e.ip_stack()[1], *p.outer());
        assert_eq!(e.uid, p.uid);
        assert_eq!(e.payload, p.payload);

        let e2 = encapsulate(e, &tun(TunnelMode::Gre), 64).unwrap();
        assert_eq!(e2.depth(), 3);
        assert_eq!(e2.outer().protocol, PROTO_GRE);
    }

    #[test]
    fn depth_guard() {
        let mut p = tcp(64, vec![]);
        for _ in 0..(MAX_ENCAP_DEPTH - 1) {
            p = encapsulate(p, &tun(TunnelMode::IpIp), 64).unwrap();
        }
        assert_eq!(p.depth(), MAX_ENCAP_DEPTH);
        assert_eq!(
            encapsulate(p, &tun(TunnelMode::IpIp), 64),
            Err(NetError::DepthExceeded)
        );
    }

    #[test]
    fn decapsulate_errors_on_plain_packet() {
        assert_eq!(decapsulate(tcp(64, vec![])), Err(NetError::NotEncapsulated));
        // A two-header stack whose outer protocol is not a tunnel protocol.
        let h = *tcp(64, vec![]).outer();
        let p = Packet::from_stack(PacketUid(2), vec![h, h], None, vec![]).unwrap();
        assert_eq!(decapsulate(p), Err(NetError::NotEncapsulated));
    }

    #[test]
    fn gre_decapsulates_like_ipip() {
        let p = tcp(64, b"abc".to_vec());
        let e = encapsulate(p.clone(), &tun(TunnelMode::Gre), 64).unwrap();
        assert_eq!(decapsulate(e).unwrap(), p);
    }

    #[test]
    fn header_bytes_limits() {
        let p = tcp(64, vec![0xAB; 1500 - 40]);
        assert_eq!(p.wire_len(), 1500);
        assert_eq!(header_bytes(&p, 128).len(), 128);
        assert!(header_bytes(&p, 0).is_empty());

        let short = tcp(64, vec![]);
        assert_eq!(short.wire_len(), 40);
        assert_eq!(header_bytes(&short, 128).len(), 40);
    }

    #[test]
    fn header_bytes_excludes_payload_when_headers_fill_limit() {
        // Eth + 4 GRE-stacked headers + TCP = 14 + 80 + 12 + 20 = 126 bytes.
        let mut p = tcp(64, vec![0xEE; 1000]);
        p.eth = Some(EthHeader {
            src: MacAddress(2),
            dst: MacAddress(4),
        });
        for _ in 0..3 {
            p = encapsulate(p, &tun(TunnelMode::Gre), 64).unwrap();
        }
        assert_eq!(p.header_len(), 126);
        let punted = header_bytes(&p, 126);
        assert_eq!(punted.len(), 126);
        assert!(!punted.contains(&0xEE));
    }

    fn arb_header() -> impl Strategy<Value = Ipv4Header> {
        (any::<u32>(), any::<u32>(), 1u8..=255, any::<u16>()).prop_map(|(s, d, ttl, id)| {
            Ipv4Header {
                src: IpAddress(s),
                dst: IpAddress(d),
                ttl,
                protocol: PROTO_UDP,
                id,
            }
        })
    }

    proptest! {
        #[test]
        fn ttl_expires_exactly_after_t_decrements(t in 1u8..=255, n in 0u16..300) {
            let mut p = tcp(t, vec![]);
            let mut expired_at = None;
            for i in 1..=n {
                match decrement_ttl(p.clone()) {
                    Ok(next) => p = next,
                    Err(_) => { expired_at = Some(i); break; }
                }
            }
            prop_assert_eq!(expired_at.is_some(), n >= u16::from(t));
            if let Some(i) = expired_at {
                prop_assert_eq!(i, u16::from(t));
            }
        }

        #[test]
        fn header_bytes_never_reach_payload(
            h in arb_header(),
            payload in proptest::collection::vec(any::<u8>(), 0..200),
            k in 0usize..120,
        ) {
            let p = Packet::new(PacketUid(0), h, Some(TransportHeader::Udp { src_port: 1, dst_port: 2 }), payload);
            let out = header_bytes(&p, k);
            prop_assert!(out.len() <= k);
            if p.header_len() >= k {
                prop_assert_eq!(&out[..], &p.to_bytes()[..k]);
                prop_assert!(out.len() <= p.header_len());
            }
        }
    }
}
