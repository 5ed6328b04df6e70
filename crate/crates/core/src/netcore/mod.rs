//! Address, header and packet primitives shared by every other module.

mod addr;
mod packet;

use thiserror::Error;

pub use addr::{IpAddress, MacAddress, Prefix};
pub(crate) use packet::hex_bytes;
pub use packet::{
    decapsulate, decrement_ttl, encapsulate, header_bytes, is_tunnel_protocol, EthHeader, Expired,
    Ipv4Header, Packet, PacketUid, TransportHeader, TunnelMode, TunnelSpec, DEFAULT_OUTER_TTL,
    MAX_ENCAP_DEPTH, PROTO_GRE, PROTO_ICMP, PROTO_IPIP, PROTO_TCP, PROTO_UDP, TCP_ACK, TCP_PSH,
    TCP_RST, TCP_SYN,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("invalid IPv4 address `{0}`")]
    BadAddress(String),
    #[error("IPv6 is not supported: `{0}`")]
    Ipv6Unsupported(String),
    #[error("invalid prefix `{0}`")]
    BadPrefix(String),
    #[error("prefix `{0}` has host bits set")]
    HostBitsSet(String),
    #[error("invalid MAC address `{0}`")]
    BadMac(String),
    #[error("tunnel endpoints are both {0}")]
    DegenerateTunnel(IpAddress),
    #[error("encapsulation depth limit reached")]
    DepthExceeded,
    #[error("packet is not IP-in-IP or GRE encapsulated")]
    NotEncapsulated,
    #[error("IPv4 header stack is empty")]
    EmptyStack,
}
