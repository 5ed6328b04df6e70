use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::apps::{aid_process, echo_reply, AidOutput, CaptureRecord, FlowSpec, HostApp};
use super::topology::{Node, Topology, TopologyError};
use super::trace::{Event, EventKind, EventTrace};
use crate::control::{
    connector_apply, controller_fanout, update_filter_match, ControlError, ControlTarget, EphemeralEntry,
    FlowModCommand, InjectOp, RouterNode,
};
use crate::dataplane::{
    l2_accept, originate, router_forward, switch_forward, time_exceeded, DropReason, EntryId, ForwardResult,
    L2Verdict, MatchSpec, NodeState,
};
use crate::netcore::{is_tunnel_protocol, EthHeader, IpAddress, Packet, PacketUid};

/// A control-plane action applied at a scheduled simulated time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ControlAction {
    Apply(FlowModCommand),
    UpdateMatch { entry_id: EntryId, new_match: MatchSpec },
    Fanout(Vec<FlowModCommand>),
}

#[derive(Debug)]
enum Work {
    Arrive { node: String, in_if: String, packet: Packet },
    FlowTick { flow: usize, k: u32 },
    Send { host: String, packet: Packet },
    Control(ControlAction),
}

#[derive(Debug)]
struct Pending {
    time: u64,
    qseq: u64,
    work: Work,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.qseq) == (other.time, other.qseq)
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.qseq).cmp(&(other.time, other.qseq))
    }
}

#[derive(Debug, Default)]
struct Uids(u64);

impl Uids {
    fn next(&mut self) -> PacketUid {
        self.0 += 1;
        PacketUid(self.0)
    }
}

#[derive(Debug)]
struct FlowState {
    host: String,
    spec: FlowSpec,
    rng: ChaCha8Rng,
}

/// Single-threaded discrete-event engine. Owns every node; provisioning
/// and staging happen before [`Simulation::run`], inspection after.
#[derive(Debug)]
pub struct Simulation {
    topo: Topology,
    queue: BinaryHeap<Reverse<Pending>>,
    trace: EventTrace,
    now: u64,
    qseq: u64,
    uids: Uids,
    next_entry: u64,
    flows: Vec<FlowState>,
    seed: u64,
}

impl Simulation {
    /// Provisions the topology and schedules every declared source flow.
    pub fn new(topology: Topology, seed: u64) -> Result<Self, TopologyError> {
        let mut sim = Simulation {
            topo: topology,
            queue: BinaryHeap::new(),
            trace: EventTrace::default(),
            now: 0,
            qseq: 0,
            uids: Uids::default(),
            next_entry: 0,
            flows: Vec::new(),
            seed,
        };
        let provisioned: Vec<_> = sim.topo.nodes.iter().map(|(n, node)| (n.clone(), node.kind())).collect();
        for (node, node_kind) in provisioned {
            sim.record(EventKind::Provision { node, node_kind });
        }
        let declared: Vec<(String, FlowSpec)> = sim
            .topo
            .nodes
            .iter()
            .filter_map(|(name, n)| match n {
                Node::Host(h) => match &h.app {
                    Some(HostApp::Source { flows }) => Some(flows.iter().map(move |f| (name.clone(), f.clone()))),
                    _ => None,
                },
                _ => None,
            })
            .flatten()
            .collect();
        for (host, spec) in declared {
            sim.add_flow(&host, spec)?;
        }
        Ok(sim)
    }

    /// Schedules an extra flow from `host`.
    pub fn add_flow(&mut self, host: &str, spec: FlowSpec) -> Result<usize, TopologyError> {
        spec.validate().map_err(TopologyError::Validation)?;
        let h = self
            .topo
            .host(host)
            .ok_or_else(|| TopologyError::Validation(format!("{host} is not a host")))?;
        if h.addr() != spec.src {
            return Err(TopologyError::Validation(format!(
                "flow source {} is not {host}'s address",
                spec.src
            )));
        }
        let idx = self.flows.len();
        let rng = ChaCha8Rng::seed_from_u64(self.seed ^ (idx as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let start = spec.start_us;
        self.flows.push(FlowState {
            host: host.to_string(),
            spec,
            rng,
        });
        self.push(start, Work::FlowTick { flow: idx, k: 0 });
        Ok(idx)
    }

    /// Has `host` originate `packet` at `time`.
    pub fn send_at(&mut self, time: u64, host: &str, packet: Packet) {
        self.push(
            time,
            Work::Send {
                host: host.to_string(),
                packet,
            },
        );
    }

    pub fn schedule_control(&mut self, time: u64, action: ControlAction) {
        self.push(time, Work::Control(action));
    }

    pub fn alloc_uid(&mut self) -> PacketUid {
        self.uids.next()
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn router(&self, name: &str) -> Option<&RouterNode> {
        self.topo.router(name)
    }

    /// Replaces a host's application.
    pub fn set_host_app(&mut self, host: &str, app: HostApp) -> Result<(), TopologyError> {
        let h = self
            .topo
            .host_mut(host)
            .ok_or_else(|| TopologyError::Validation(format!("{host} is not a host")))?;
        h.app = Some(app);
        Ok(())
    }

    pub fn capture_log(&self, host: &str) -> &[CaptureRecord] {
        match self.topo.host(host).and_then(|h| h.app.as_ref()) {
            Some(HostApp::Aid(aid)) => &aid.capture_log,
            _ => &[],
        }
    }

    pub fn trace(&self) -> &EventTrace {
        &self.trace
    }

    pub fn into_trace(self) -> EventTrace {
        self.trace
    }

    /// Processes events in (time, seq) order until the queue drains or the
    /// next event lies beyond `horizon`. Can be called again with a later
    /// horizon to continue.
    pub fn run(&mut self, horizon: u64) -> &EventTrace {
        while let Some(Reverse(next)) = self.queue.peek() {
            if next.time > horizon {
                let pending = self.queue.len();
                self.now = horizon;
                self.record(EventKind::Annotation {
                    note: format!("horizon reached with {pending} pending"),
                });
                break;
            }
            let Reverse(p) = self.queue.pop().expect("peeked");
            self.now = p.time;
            self.dispatch(p.work);
        }
        &self.trace
    }

    fn push(&mut self, time: u64, work: Work) {
        self.qseq += 1;
        self.queue.push(Reverse(Pending {
            time,
            qseq: self.qseq,
            work,
        }));
    }

    fn record(&mut self, kind: EventKind) {
        let seq = self.trace.events.len() as u64;
        self.trace.events.push(Event {
            time: self.now,
            seq,
            kind,
        });
    }

    fn drop_packet(&mut self, node: &str, packet: Packet, reason: DropReason) {
        self.record(EventKind::Drop {
            node: node.to_string(),
            packet,
            reason,
        });
    }

    fn dispatch(&mut self, work: Work) {
        match work {
            Work::Arrive { node, in_if, packet } => self.arrive(&node, &in_if, packet),
            Work::Send { host, packet } => self.host_send(&host, packet),
            Work::FlowTick { flow, k } => {
                let f = &mut self.flows[flow];
                let payload = f.spec.payload.generate(&mut f.rng);
                let uid = self.uids.next();
                let f = &self.flows[flow];
                let packet = f.spec.packet(uid, k, payload);
                let (host, count, interval) = (f.host.clone(), f.spec.count, f.spec.interval_us);
                if k + 1 < count {
                    self.push(self.now + interval, Work::FlowTick { flow, k: k + 1 });
                }
                self.host_send(&host, packet);
            }
            Work::Control(action) => {
                let result = match action {
                    ControlAction::Apply(cmd) => connector_apply(self, &cmd).map(|_| ()),
                    ControlAction::UpdateMatch { entry_id, new_match } => {
                        update_filter_match(self, entry_id, new_match).map(|_| ())
                    }
                    ControlAction::Fanout(cmds) => {
                        let out = controller_fanout(self, &cmds);
                        match out.into_values().find_map(|o| o.error) {
                            Some(e) => Err(e),
                            None => Ok(()),
                        }
                    }
                };
                if let Err(e) = result {
                    self.record(EventKind::Annotation {
                        note: format!("control action failed: {e}"),
                    });
                }
            }
        }
    }

    fn state_of(&self, node: &str) -> &NodeState {
        match &self.topo.nodes[node] {
            Node::Router(r) => &r.state,
            Node::Host(h) => &h.state,
            Node::Switch(_) => unreachable!("switches do not route"),
        }
    }

    fn host_send(&mut self, host: &str, packet: Packet) {
        let res = originate(self.state_of(host), packet);
        self.apply_result(host, res);
    }

    fn apply_result(&mut self, node: &str, res: ForwardResult) {
        for d in res.drops {
            self.drop_packet(node, d.packet, d.reason);
        }
        for p in res.punts {
            self.record(EventKind::Punt {
                node: node.to_string(),
                uid: p.uid,
                bytes: p.bytes,
            });
        }
        for e in res.emissions {
            self.transmit(node, &e.out_if, e.next_hop, e.packet);
        }
        for reply in res.icmp_replies {
            let r = originate(self.state_of(node), reply);
            self.apply_result(node, r);
        }
    }

    /// Puts a frame on the wire. Routed packets get a fresh Ethernet header
    /// addressed to `next_hop`.
    fn transmit(&mut self, node: &str, out_if: &str, next_hop: Option<IpAddress>, mut packet: Packet) {
        let src_mac = self.topo.nodes[node]
            .interfaces()
            .iter()
            .find(|i| i.name == out_if)
            .map(|i| i.mac);
        if let Some(nh) = next_hop {
            match (src_mac, self.topo.arp.get(&nh)) {
                (Some(src), Some(&dst)) => packet.eth = Some(EthHeader { src, dst }),
                _ => return self.drop_packet(node, packet, DropReason::NoRoute),
            }
        }
        let Some(link) = self.topo.link(node, out_if) else {
            return self.drop_packet(node, packet, DropReason::NoRoute);
        };
        let (peer, at) = (link.peer.clone(), self.now + link.latency_us);
        self.record(EventKind::PacketEmit {
            node: node.to_string(),
            out_if: out_if.to_string(),
            packet: packet.clone(),
        });
        self.push(
            at,
            Work::Arrive {
                node: peer.node,
                in_if: peer.interface,
                packet,
            },
        );
    }

    fn arrive(&mut self, node: &str, in_if: &str, packet: Packet) {
        self.record(EventKind::PacketArrive {
            node: node.to_string(),
            in_if: in_if.to_string(),
            packet: packet.clone(),
        });
        let uids = &mut self.uids;
        match self.topo.nodes.get_mut(node).expect("links point at known nodes") {
            Node::Switch(sw) => {
                let ports = sw.port_names();
                let out = switch_forward(&mut sw.table, packet.clone(), in_if, &ports, || uids.next());
                if out.is_empty() {
                    return self.drop_packet(node, packet, DropReason::NotAccepted);
                }
                for (port, frame) in out {
                    self.transmit(node, &port, None, frame);
                }
            }
            Node::Router(r) => {
                let if_mac = r.state.interface(in_if).expect("arrival interface exists").mac;
                if l2_accept(&r.state.mac_table(in_if), &packet, if_mac) == L2Verdict::Ignore {
                    return self.drop_packet(node, packet, DropReason::NotAccepted);
                }
                let res = router_forward(&r.state, packet, in_if, || uids.next());
                self.apply_result(node, res);
            }
            Node::Host(h) => {
                let if_mac = h.state.interfaces[0].mac;
                if l2_accept(&h.state.mac_table(in_if), &packet, if_mac) == L2Verdict::Ignore {
                    return self.drop_packet(node, packet, DropReason::NotAccepted);
                }
                if packet.outer().dst != h.addr() {
                    return self.drop_packet(node, packet, DropReason::NoRoute);
                }
                self.host_receive(node, packet);
            }
        }
    }

    fn host_receive(&mut self, host: &str, mut packet: Packet) {
        let now = self.now;
        let h = self.topo.host_mut(host).expect("caller checked");
        let addr = h.addr();
        packet.eth = None;
        match &mut h.app {
            Some(HostApp::Aid(aid)) if is_tunnel_protocol(packet.outer().protocol) => {
                let out = aid_process(aid, packet.clone(), now);
                let capture = aid.capture_log.last().cloned();
                match out {
                    Ok(out) => {
                        let c = capture.expect("aid_process logged a capture");
                        self.record(EventKind::Capture {
                            node: host.to_string(),
                            packet: c.packet,
                            payload: c.payload,
                        });
                        match out {
                            AidOutput::Reinject(p) => self.host_send(host, p),
                            AidOutput::Sink(p) => self.deliver(host, p),
                            AidOutput::Expired(p) => {
                                let reply = time_exceeded(&p, addr, self.uids.next());
                                self.drop_packet(host, p, DropReason::Ttl);
                                if let Some(r) = reply {
                                    self.host_send(host, r);
                                }
                            }
                        }
                    }
                    Err(_) => self.deliver(host, packet),
                }
            }
            Some(HostApp::EchoServer) => {
                let reply = echo_reply(&packet, PacketUid(0));
                self.deliver(host, packet);
                if let Some(mut r) = reply {
                    r.uid = self.uids.next();
                    self.host_send(host, r);
                }
            }
            _ => self.deliver(host, packet),
        }
    }

    fn deliver(&mut self, host: &str, packet: Packet) {
        self.record(EventKind::AppDeliver {
            host: host.to_string(),
            packet,
        });
    }
}

impl ControlTarget for Simulation {
    fn router_mut(&mut self, node: &str) -> Result<&mut RouterNode, ControlError> {
        match self.topo.nodes.get_mut(node) {
            Some(Node::Router(r)) => Ok(r),
            Some(_) => Err(ControlError::NotARouter(node.to_string())),
            None => Err(ControlError::UnknownNode(node.to_string())),
        }
    }

    fn router_names(&self) -> Vec<String> {
        self.topo.routers().map(|r| r.name().to_string()).collect()
    }

    fn allocate_entry_id(&mut self) -> EntryId {
        self.next_entry += 1;
        EntryId(self.next_entry)
    }

    fn now(&self) -> u64 {
        self.now
    }

    fn record_inject(&mut self, node: &str, op: InjectOp, entry: &EphemeralEntry) {
        self.record(EventKind::Inject {
            node: node.to_string(),
            op,
            entry: entry.clone(),
        });
    }
}

/// Provisions `topology` and runs it to `horizon`.
pub fn run(topology: Topology, horizon: u64, seed: u64) -> Result<EventTrace, TopologyError> {
    let mut sim = Simulation::new(topology, seed)?;
    sim.run(horizon);
    Ok(sim.into_trace())
}
