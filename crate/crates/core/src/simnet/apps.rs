use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::netcore::{
    decapsulate, decrement_ttl, encapsulate, is_tunnel_protocol, Expired, IpAddress, NetError, Packet,
    PacketUid, TransportHeader, TunnelSpec, DEFAULT_OUTER_TTL, TCP_ACK, TCP_PSH, TCP_SYN,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HostApp {
    Source { flows: Vec<FlowSpec> },
    /// Answers ICMP echo requests and TCP SYNs.
    EchoServer,
    Aid(AidHost),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowProto {
    Tcp,
    Udp,
    Icmp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadSpec {
    /// The same text in every packet.
    Text(String),
    #[serde(with = "crate::netcore::hex_bytes")]
    Hex(Vec<u8>),
    /// `n` bytes per packet drawn from the run's seeded generator.
    Random(usize),
}

impl PayloadSpec {
    pub fn generate(&self, rng: &mut impl RngCore) -> Vec<u8> {
        match self {
            PayloadSpec::Text(s) => s.as_bytes().to_vec(),
            PayloadSpec::Hex(b) => b.clone(),
            PayloadSpec::Random(n) => {
                let mut b = vec![0; *n];
                rng.fill_bytes(&mut b);
                b
            }
        }
    }
}

fn default_ttl() -> u8 {
    64
}

fn default_src_port() -> u16 {
    49152
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub src: IpAddress,
    pub dst: IpAddress,
    pub protocol: FlowProto,
    #[serde(default = "default_src_port")]
    pub src_port: u16,
    #[serde(default)]
    pub dst_port: u16,
    pub count: u32,
    #[serde(default)]
    pub interval_us: u64,
    #[serde(default)]
    pub start_us: u64,
    pub payload: PayloadSpec,
    #[serde(default = "default_ttl")]
    pub start_ttl: u8,
}

impl FlowSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.count == 0 {
            return Err("flow count must be at least 1".into());
        }
        if self.start_ttl == 0 {
            return Err("flow start_ttl must be at least 1".into());
        }
        Ok(())
    }

    /// Packet `k` of the flow. The IP id carries `k` so copies can be told
    /// apart in traces.
    pub fn packet(&self, uid: PacketUid, k: u32, payload: Vec<u8>) -> Packet {
        let transport = match self.protocol {
            FlowProto::Tcp => TransportHeader::Tcp {
                src_port: self.src_port,
                dst_port: self.dst_port,
                flags: TCP_PSH | TCP_ACK,
            },
            FlowProto::Udp => TransportHeader::Udp {
                src_port: self.src_port,
                dst_port: self.dst_port,
            },
            FlowProto::Icmp => TransportHeader::IcmpEcho { seq: k as u16 },
        };
        Packet::datagram(uid, self.src, self.dst, self.start_ttl, flow_ip_id(k), transport, payload)
    }
}

/// Flow packets use IP ids below 0x8000; probes use the upper half.
pub fn flow_ip_id(k: u32) -> u16 {
    (k % 0x8000) as u16
}

/// Pure byte-sequence transformation applied by the aid before re-injection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutator {
    #[serde(with = "crate::netcore::hex_bytes")]
    Append(Vec<u8>),
    #[serde(with = "crate::netcore::hex_bytes")]
    Prepend(Vec<u8>),
    /// Replace every occurrence of `from` with `to`.
    Replace {
        #[serde(with = "crate::netcore::hex_bytes")]
        from: Vec<u8>,
        #[serde(with = "crate::netcore::hex_bytes")]
        to: Vec<u8>,
    },
}

impl Mutator {
    pub fn apply(&self, payload: &[u8]) -> Vec<u8> {
        match self {
            Mutator::Append(m) => [payload, m].concat(),
            Mutator::Prepend(m) => [m, payload].concat(),
            Mutator::Replace { from, to } => {
                if from.is_empty() {
                    return payload.to_vec();
                }
                let mut out = Vec::with_capacity(payload.len());
                let mut i = 0;
                while i < payload.len() {
                    if payload[i..].starts_with(from) {
                        out.extend_from_slice(to);
                        i += from.len();
                    } else {
                        out.push(payload[i]);
                        i += 1;
                    }
                }
                out
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnMode {
    /// Forward the inner packet with the aid's own routing.
    #[default]
    Direct,
    /// Send it back through a tunnel to the compromised router.
    Hairpin { tunnel: TunnelSpec },
    /// Capture only; nothing is sent on.
    Sink,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureRecord {
    pub time: u64,
    pub packet: Packet,
    #[serde(with = "crate::netcore::hex_bytes")]
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AidHost {
    #[serde(default)]
    pub mode: ReturnMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutator: Option<Mutator>,
    /// Leave the inner TTL alone, making the aid invisible to traceroute.
    #[serde(default)]
    pub stealth: bool,
    #[serde(skip)]
    pub capture_log: Vec<CaptureRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AidOutput {
    Reinject(Packet),
    /// Inner TTL ran out at the aid.
    Expired(Packet),
    Sink(Packet),
}

/// Terminates one tunneled packet at the aid: decapsulate, log, optionally
/// mutate, then hand back what should happen to the inner packet.
pub fn aid_process(app: &mut AidHost, packet: Packet, now: u64) -> Result<AidOutput, NetError> {
    if !is_tunnel_protocol(packet.outer().protocol) {
        return Err(NetError::NotEncapsulated);
    }
    let mut inner = decapsulate(packet)?;
    inner.eth = None;
    app.capture_log.push(CaptureRecord {
        time: now,
        payload: inner.payload.clone(),
        packet: inner.clone(),
    });
    if app.mode == ReturnMode::Sink {
        return Ok(AidOutput::Sink(inner));
    }
    if !app.stealth {
        inner = match decrement_ttl(inner) {
            Ok(p) => p,
            Err(Expired(p)) => return Ok(AidOutput::Expired(p)),
        };
    }
    if let Some(m) = &app.mutator {
        inner.payload = m.apply(&inner.payload);
    }
    match app.mode {
        ReturnMode::Hairpin { tunnel } => encapsulate(inner, &tunnel, DEFAULT_OUTER_TTL).map(AidOutput::Reinject),
        _ => Ok(AidOutput::Reinject(inner)),
    }
}

/// What an echo server sends back, if anything.
pub fn echo_reply(request: &Packet, uid: PacketUid) -> Option<Packet> {
    if request.depth() != 1 {
        return None;
    }
    let h = request.outer();
    let mut payload = Vec::new();
    let transport = match request.transport? {
        TransportHeader::IcmpEcho { seq } => {
            payload = request.payload.clone();
            TransportHeader::IcmpEchoReply { seq }
        }
        TransportHeader::Tcp {
            src_port,
            dst_port,
            flags,
        } if flags & TCP_SYN != 0 && flags & TCP_ACK == 0 => TransportHeader::Tcp {
            src_port: dst_port,
            dst_port: src_port,
            flags: TCP_SYN | TCP_ACK,
        },
        _ => return None,
    };
    Some(Packet::datagram(uid, h.dst, h.src, 64, h.id, transport, payload))
}
