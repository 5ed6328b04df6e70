use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::netcore::{IpAddress, Packet, TransportHeader, TCP_ACK, TCP_SYN};
use crate::simnet::{EventKind, Simulation};

/// Simulated time between consecutive probes; longer than any round trip
/// in the bundled fixtures.
pub const PROBE_SPACING_US: u64 = 1_000_000;
pub const DEFAULT_MAX_TTL: u8 = 30;
const PROBE_ID_BASE: u16 = 0x8000;
const PROBE_SRC_PORT: u16 = 33434;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProbeProto {
    Icmp,
    Tcp { dst_port: u16 },
}

impl fmt::Display for ProbeProto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProbeProto::Icmp => f.write_str("icmp"),
            ProbeProto::Tcp { dst_port } => write!(f, "tcp:{dst_port}"),
        }
    }
}

impl FromStr for ProbeProto {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "icmp" => Ok(ProbeProto::Icmp),
            None if s == "tcp" => Ok(ProbeProto::Tcp { dst_port: 80 }),
            Some(("tcp", p)) => p
                .parse()
                .map(|dst_port| ProbeProto::Tcp { dst_port })
                .map_err(|_| format!("bad port in `{s}`")),
            _ => Err(format!("expected `icmp` or `tcp:PORT`, got `{s}`")),
        }
    }
}

impl Serialize for ProbeProto {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProbeProto {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Responder {
    Addr(IpAddress),
    Timeout,
}

impl Responder {
    pub fn addr(self) -> Option<IpAddress> {
        match self {
            Responder::Addr(a) => Some(a),
            Responder::Timeout => None,
        }
    }
}

impl fmt::Display for Responder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Responder::Addr(a) => a.fmt(f),
            Responder::Timeout => f.write_str("*"),
        }
    }
}

impl Serialize for Responder {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Responder::Addr(a) => a.serialize(s),
            Responder::Timeout => s.serialize_str("timeout"),
        }
    }
}

impl<'de> Deserialize<'de> for Responder {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == "timeout" {
            return Ok(Responder::Timeout);
        }
        s.parse().map(Responder::Addr).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub ttl: u8,
    pub responder: Responder,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rtt_us: Option<u64>,
}

/// Result of one traceroute. `hops` holds the intermediate hops only;
/// the destination's answer is reported through `reached_at`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracePath {
    pub protocol: ProbeProto,
    pub dst: IpAddress,
    pub hops: Vec<Hop>,
    pub reached: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reached_at: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reached_rtt_us: Option<u64>,
}

impl TracePath {
    /// Responders by ttl, with the destination appended when reached.
    pub fn responders(&self) -> Vec<Responder> {
        let mut out: Vec<_> = self.hops.iter().map(|h| h.responder).collect();
        if self.reached {
            out.push(Responder::Addr(self.dst));
        }
        out
    }
}

fn probe(proto: ProbeProto, src: IpAddress, dst: IpAddress, ttl: u8, sim: &mut Simulation) -> Packet {
    let transport = match proto {
        ProbeProto::Icmp => TransportHeader::IcmpEcho { seq: ttl.into() },
        ProbeProto::Tcp { dst_port } => TransportHeader::Tcp {
            src_port: PROBE_SRC_PORT + u16::from(ttl),
            dst_port,
            flags: TCP_SYN,
        },
    };
    Packet::datagram(sim.alloc_uid(), src, dst, ttl, PROBE_ID_BASE | u16::from(ttl), transport, Vec::new())
}

enum Answer {
    Expired(IpAddress),
    Final,
}

fn classify(packet: &Packet, dst: IpAddress, id: u16) -> Option<Answer> {
    if packet.depth() != 1 {
        return None;
    }
    let h = packet.outer();
    match packet.transport? {
        TransportHeader::IcmpTimeExceeded { original_header } if original_header.id == id && original_header.dst == dst => {
            Some(Answer::Expired(h.src))
        }
        TransportHeader::IcmpEchoReply { .. } if h.src == dst && h.id == id => Some(Answer::Final),
        TransportHeader::Tcp { flags, .. } if h.src == dst && h.id == id && flags == TCP_SYN | TCP_ACK => {
            Some(Answer::Final)
        }
        _ => None,
    }
}

/// Sends probes with ttl 1, 2, ... from `src_host` toward `dst`, one probe
/// per [`PROBE_SPACING_US`], stopping at the first answer from `dst`. Runs
/// the simulation forward as it goes; RTTs are on the simulated clock.
pub fn traceroute(
    sim: &mut Simulation,
    src_host: &str,
    dst: IpAddress,
    proto: ProbeProto,
    max_ttl: u8,
) -> Result<TracePath, ScenarioError> {
    let src = sim
        .topology()
        .host(src_host)
        .ok_or_else(|| ScenarioError::NotAHost(src_host.to_string()))?
        .addr();
    let start = sim.trace().events.last().map_or(0, |e| e.time);
    let mut path = TracePath {
        protocol: proto,
        dst,
        hops: Vec::new(),
        reached: false,
        reached_at: None,
        reached_rtt_us: None,
    };
    for ttl in 1..=max_ttl {
        let sent = start + u64::from(ttl - 1) * PROBE_SPACING_US;
        let p = probe(proto, src, dst, ttl, sim);
        let id = p.outer().id;
        sim.send_at(sent, src_host, p);
        let mark = sim.trace().events.len();
        sim.run(sent + PROBE_SPACING_US - 1);
        let answer = sim.trace().events[mark..].iter().find_map(|e| match &e.kind {
            EventKind::AppDeliver { host, packet } if host == src_host => {
                classify(packet, dst, id).map(|a| (a, e.time - sent))
            }
            _ => None,
        });
        match answer {
            Some((Answer::Final, rtt)) => {
                path.reached = true;
                path.reached_at = Some(ttl);
                path.reached_rtt_us = Some(rtt);
                break;
            }
            Some((Answer::Expired(from), rtt)) => path.hops.push(Hop {
                ttl,
                responder: Responder::Addr(from),
                rtt_us: Some(rtt),
            }),
            None => path.hops.push(Hop {
                ttl,
                responder: Responder::Timeout,
                rtt_us: None,
            }),
        }
    }
    Ok(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Clean,
    Divergent,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub icmp: TracePath,
    pub tcp: TracePath,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub first_divergent_ttl: Option<u8>,
    /// Responders seen by one probe protocol only.
    pub extra_hops: Vec<IpAddress>,
    pub verdict: Verdict,
}

/// Compares an ICMP and a TCP path to the same destination.
pub fn detect_divergence(p_icmp: &TracePath, p_tcp: &TracePath) -> Result<DivergenceReport, ScenarioError> {
    if p_icmp.dst != p_tcp.dst {
        return Err(ScenarioError::MismatchedTargets(p_icmp.dst, p_tcp.dst));
    }
    let a = p_icmp.responders();
    let b = p_tcp.responders();
    let first = a
        .iter()
        .zip(&b)
        .position(|(x, y)| x != y)
        .or((a.len() != b.len()).then(|| a.len().min(b.len())))
        .map(|i| i as u8 + 1);
    let sa: BTreeSet<_> = a.iter().filter_map(|r| r.addr()).collect();
    let sb: BTreeSet<_> = b.iter().filter_map(|r| r.addr()).collect();
    let extra_hops = sa.symmetric_difference(&sb).copied().collect();
    Ok(DivergenceReport {
        icmp: p_icmp.clone(),
        tcp: p_tcp.clone(),
        first_divergent_ttl: first,
        extra_hops,
        verdict: if first.is_some() { Verdict::Divergent } else { Verdict::Clean },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(proto: ProbeProto, hops: &[&str], reached: bool) -> TracePath {
        TracePath {
            protocol: proto,
            dst: "203.0.113.80".parse().unwrap(),
            hops: hops
                .iter()
                .enumerate()
                .map(|(i, h)| Hop {
                    ttl: i as u8 + 1,
                    responder: if *h == "*" { Responder::Timeout } else { Responder::Addr(h.parse().unwrap()) },
                    rtt_us: None,
                })
                .collect(),
            reached,
            reached_at: reached.then_some(hops.len() as u8 + 1),
            reached_rtt_us: None,
        }
    }

    #[test]
    fn proto_text() {
        assert_eq!("icmp".parse::<ProbeProto>().unwrap(), ProbeProto::Icmp);
        assert_eq!("tcp:443".parse::<ProbeProto>().unwrap(), ProbeProto::Tcp { dst_port: 443 });
        assert!("udp:53".parse::<ProbeProto>().is_err());
        assert_eq!(ProbeProto::Tcp { dst_port: 80 }.to_string(), "tcp:80");
    }

    #[test]
    fn reflexive_is_clean() {
        let p = path(ProbeProto::Icmp, &["10.0.0.1", "10.0.0.2"], true);
        let r = detect_divergence(&p, &p).unwrap();
        assert_eq!(r.verdict, Verdict::Clean);
        assert!(r.extra_hops.is_empty());
        assert_eq!(r.first_divergent_ttl, None);
    }

    #[test]
    fn longer_path_diverges_where_shorter_ends() {
        let a = path(ProbeProto::Icmp, &["10.0.0.1"], false);
        let b = path(ProbeProto::Tcp { dst_port: 80 }, &["10.0.0.1", "10.0.0.9"], false);
        let r = detect_divergence(&a, &b).unwrap();
        assert_eq!(r.first_divergent_ttl, Some(2));
        assert_eq!(r.extra_hops, vec!["10.0.0.9".parse::<IpAddress>().unwrap()]);
    }

    #[test]
    fn timeouts_count_as_responders_but_not_extra_hops() {
        let a = path(ProbeProto::Icmp, &["10.0.0.1", "*"], true);
        let b = path(ProbeProto::Tcp { dst_port: 80 }, &["10.0.0.1", "10.0.0.2"], true);
        let r = detect_divergence(&a, &b).unwrap();
        assert_eq!(r.first_divergent_ttl, Some(2));
        assert_eq!(r.extra_hops.len(), 1);
    }

    #[test]
    fn mismatched_targets() {
        let a = path(ProbeProto::Icmp, &[], true);
        let mut b = a.clone();
        b.dst = "203.0.113.81".parse().unwrap();
        assert!(matches!(detect_divergence(&a, &b), Err(ScenarioError::MismatchedTargets(..))));
    }
}
