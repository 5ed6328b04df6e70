use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::topology::NodeKind;
use crate::control::{EphemeralEntry, InjectOp};
use crate::dataplane::DropReason;
use crate::netcore::{Packet, PacketUid};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Provision {
        node: String,
        node_kind: NodeKind,
    },
    PacketArrive {
        node: String,
        in_if: String,
        packet: Packet,
    },
    PacketEmit {
        node: String,
        out_if: String,
        packet: Packet,
    },
    Drop {
        node: String,
        packet: Packet,
        reason: DropReason,
    },
    Punt {
        node: String,
        uid: PacketUid,
        #[serde(with = "crate::netcore::hex_bytes")]
        bytes: Vec<u8>,
    },
    Capture {
        node: String,
        packet: Packet,
        #[serde(with = "crate::netcore::hex_bytes")]
        payload: Vec<u8>,
    },
    Inject {
        node: String,
        op: InjectOp,
        entry: EphemeralEntry,
    },
    AppDeliver {
        host: String,
        packet: Packet,
    },
    Annotation {
        note: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub time: u64,
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// The authoritative, totally ordered record of a run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventTrace {
    pub events: Vec<Event>,
}

impl EventTrace {
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> Result<Self, serde_json::Error> {
        let mut events = Vec::new();
        for line in r.lines() {
            let line = line.map_err(serde_json::Error::io)?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line)?);
        }
        Ok(EventTrace { events })
    }

    pub fn from_ndjson(s: &str) -> Result<Self, serde_json::Error> {
        Self::read_ndjson(s.as_bytes())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Event> {
        self.events.iter()
    }

    /// (time, packet) for every packet handed to `host`'s applications.
    pub fn deliveries<'a>(&'a self, host: &'a str) -> impl Iterator<Item = (u64, &'a Packet)> + 'a {
        self.events.iter().filter_map(move |e| match &e.kind {
            EventKind::AppDeliver { host: h, packet } if h == host => Some((e.time, packet)),
            _ => None,
        })
    }

    pub fn drops<'a>(&'a self, node: &'a str) -> impl Iterator<Item = (&'a Packet, DropReason)> + 'a {
        self.events.iter().filter_map(move |e| match &e.kind {
            EventKind::Drop { node: n, packet, reason } if n == node => Some((packet, *reason)),
            _ => None,
        })
    }

    pub fn drop_count(&self, node: &str, reason: DropReason) -> usize {
        self.drops(node).filter(|(_, r)| *r == reason).count()
    }

    pub fn captures<'a>(&'a self, node: &'a str) -> impl Iterator<Item = (u64, &'a Packet)> + 'a {
        self.events.iter().filter_map(move |e| match &e.kind {
            EventKind::Capture { node: n, packet, .. } if n == node => Some((e.time, packet)),
            _ => None,
        })
    }

    /// Nodes a packet uid arrived at, in order.
    pub fn arrivals(&self, uid: PacketUid) -> Vec<(u64, &str)> {
        self.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::PacketArrive { node, packet, .. } if packet.uid == uid => Some((e.time, node.as_str())),
                _ => None,
            })
            .collect()
    }

    /// First emission time of every uid emitted by `node`.
    pub fn first_emits(&self, node: &str) -> BTreeMap<PacketUid, u64> {
        let mut out = BTreeMap::new();
        for e in &self.events {
            if let EventKind::PacketEmit { node: n, packet, .. } = &e.kind {
                if n == node {
                    out.entry(packet.uid).or_insert(e.time);
                }
            }
        }
        out
    }

    pub fn horizon_reached(&self) -> bool {
        self.events
            .iter()
            .any(|e| matches!(&e.kind, EventKind::Annotation { note } if note.starts_with("horizon")))
    }

    /// Packet copies that did not end in exactly one delivery, drop or
    /// punt, as (uid, terminal count).
    pub fn conservation_violations(&self) -> Vec<(PacketUid, usize)> {
        let mut terminals: BTreeMap<PacketUid, usize> = BTreeMap::new();
        for e in &self.events {
            match &e.kind {
                EventKind::PacketEmit { packet, .. } | EventKind::PacketArrive { packet, .. } => {
                    terminals.entry(packet.uid).or_insert(0);
                }
                EventKind::AppDeliver { packet, .. } | EventKind::Drop { packet, .. } => {
                    *terminals.entry(packet.uid).or_insert(0) += 1;
                }
                EventKind::Punt { uid, .. } => *terminals.entry(*uid).or_insert(0) += 1,
                _ => {}
            }
        }
        terminals.into_iter().filter(|(_, n)| *n != 1).collect()
    }
}
