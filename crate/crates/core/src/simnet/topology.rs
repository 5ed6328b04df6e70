use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::apps::HostApp;
use crate::control::{ConfigStore, Role, RouterNode};
use crate::dataplane::{FibEntry, FilterRule, Interface, MacTable, NextHop, NodeState, RpfMode};
use crate::netcore::{IpAddress, MacAddress, NetError, Prefix, TunnelSpec};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TopologyError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid topology: {0}")]
    Validation(String),
}

fn invalid(msg: impl Into<String>) -> TopologyError {
    TopologyError::Validation(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Router,
    Switch,
    Host,
}

/// `node:interface`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Endpoint {
    pub node: String,
    pub interface: String,
}

impl Endpoint {
    pub fn new(node: impl Into<String>, interface: impl Into<String>) -> Self {
        Endpoint {
            node: node.into(),
            interface: interface.into(),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.node, self.interface)
    }
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            Some((n, i)) if !n.is_empty() && !i.is_empty() && !i.contains(':') => Ok(Endpoint::new(n, i)),
            _ => Err(format!("expected `node:interface`, got `{s}`")),
        }
    }
}

/// Interface address with its on-link prefix length, written `a.b.c.d/len`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IfAddr {
    pub addr: IpAddress,
    pub prefix: Prefix,
}

impl fmt::Display for IfAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.addr, self.prefix.len())
    }
}

impl FromStr for IfAddr {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, NetError> {
        let (a, l) = s.split_once('/').ok_or_else(|| NetError::BadPrefix(s.into()))?;
        let addr: IpAddress = a.parse()?;
        let len: u8 = l.parse().map_err(|_| NetError::BadPrefix(s.into()))?;
        if len > 32 {
            return Err(NetError::BadPrefix(s.into()));
        }
        Ok(IfAddr {
            addr,
            prefix: Prefix::truncating(addr, len),
        })
    }
}

macro_rules! string_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(Endpoint);
string_serde!(IfAddr);

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceDoc {
    pub name: String,
    pub mac: MacAddress,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub addr: Option<IfAddr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<Endpoint>,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub kind: NodeKind,
    #[serde(default)]
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub punt_limit: Option<usize>,
    #[serde(default = "yes")]
    pub connector: bool,
    /// Default gateway, hosts only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gateway: Option<IpAddress>,
    pub interfaces: Vec<InterfaceDoc>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDoc {
    pub ends: [Endpoint; 2],
    pub latency_us: u64,
    /// Accepted, not modeled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_bps: Option<u64>,
}

/// The topology document as written.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDoc {
    pub nodes: BTreeMap<String, NodeDoc>,
    #[serde(default)]
    pub links: Vec<LinkDoc>,
    #[serde(default)]
    pub fibs: BTreeMap<String, Vec<FibEntry>>,
    #[serde(default)]
    pub filters: BTreeMap<String, Vec<FilterRule>>,
    #[serde(default)]
    pub tunnels: BTreeMap<String, Vec<TunnelSpec>>,
    #[serde(default)]
    pub rpf: BTreeMap<String, BTreeMap<String, RpfMode>>,
    #[serde(default)]
    pub accept_macs: BTreeMap<String, BTreeMap<String, BTreeSet<MacAddress>>>,
    #[serde(default)]
    pub apps: BTreeMap<String, HostApp>,
    /// Scenario plans; opaque to the simulator.
    #[serde(default)]
    pub plans: BTreeMap<String, Value>,
}

#[derive(Clone, Debug)]
pub struct SwitchNode {
    pub name: String,
    pub ports: Vec<Interface>,
    pub table: MacTable,
}

impl SwitchNode {
    pub fn port_names(&self) -> Vec<String> {
        self.ports.iter().map(|p| p.name.clone()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct HostNode {
    /// Single interface, a connected route and the default route.
    pub state: NodeState,
    pub gateway: Option<IpAddress>,
    pub app: Option<HostApp>,
}

impl HostNode {
    pub fn addr(&self) -> IpAddress {
        self.state.interfaces[0].addr.expect("validated: hosts are addressed")
    }

    pub fn if_name(&self) -> &str {
        &self.state.interfaces[0].name
    }
}

#[derive(Clone, Debug)]
pub enum Node {
    Router(RouterNode),
    Switch(SwitchNode),
    Host(HostNode),
}

impl Node {
    pub fn kind(&self) -> NodeKind {
        match self {
            Node::Router(_) => NodeKind::Router,
            Node::Switch(_) => NodeKind::Switch,
            Node::Host(_) => NodeKind::Host,
        }
    }

    pub fn interfaces(&self) -> &[Interface] {
        match self {
            Node::Router(r) => &r.state.interfaces,
            Node::Switch(s) => &s.ports,
            Node::Host(h) => &h.state.interfaces,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinkEnd<'a> {
    pub peer: &'a Endpoint,
    pub latency_us: u64,
}

/// A validated, provisioned topology.
#[derive(Clone, Debug)]
pub struct Topology {
    pub nodes: BTreeMap<String, Node>,
    links: HashMap<Endpoint, (Endpoint, u64)>,
    /// Static neighbor table: interface address to MAC.
    pub arp: BTreeMap<IpAddress, MacAddress>,
    pub plans: BTreeMap<String, Value>,
}

impl Topology {
    pub fn link(&self, node: &str, interface: &str) -> Option<LinkEnd<'_>> {
        self.links
            .get(&Endpoint::new(node, interface))
            .map(|(peer, latency_us)| LinkEnd {
                peer,
                latency_us: *latency_us,
            })
    }

    pub fn router(&self, name: &str) -> Option<&RouterNode> {
        match self.nodes.get(name) {
            Some(Node::Router(r)) => Some(r),
            _ => None,
        }
    }

    pub fn host(&self, name: &str) -> Option<&HostNode> {
        match self.nodes.get(name) {
            Some(Node::Host(h)) => Some(h),
            _ => None,
        }
    }

    pub fn host_mut(&mut self, name: &str) -> Option<&mut HostNode> {
        match self.nodes.get_mut(name) {
            Some(Node::Host(h)) => Some(h),
            _ => None,
        }
    }

    pub fn routers(&self) -> impl Iterator<Item = &RouterNode> {
        self.nodes.values().filter_map(|n| match n {
            Node::Router(r) => Some(r),
            _ => None,
        })
    }

    /// Node owning an interface address.
    pub fn owner_of(&self, addr: IpAddress) -> Option<&str> {
        self.nodes
            .iter()
            .find(|(_, n)| n.interfaces().iter().any(|i| i.addr == Some(addr)))
            .map(|(name, _)| name.as_str())
    }

    /// Host whose interface carries `addr`.
    pub fn host_by_addr(&self, addr: IpAddress) -> Option<&str> {
        self.owner_of(addr).filter(|n| self.host(n).is_some())
    }
}

/// Parses and validates a topology document.
pub fn load_topology(document: &str) -> Result<Topology, TopologyError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let doc: TopologyDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let message = e.inner().to_string();
        if message.starts_with("IPv6") {
            invalid(format!("{}: {message}", e.path()))
        } else {
            TopologyError::Schema {
                path: e.path().to_string(),
                message,
            }
        }
    })?;
    build(doc)
}

/// Validates an already-parsed document.
pub fn build(doc: TopologyDoc) -> Result<Topology, TopologyError> {
    let mut addrs: BTreeMap<IpAddress, (String, MacAddress)> = BTreeMap::new();
    let mut macs = BTreeSet::new();
    for (name, node) in &doc.nodes {
        if node.interfaces.is_empty() {
            return Err(invalid(format!("{name} has no interfaces")));
        }
        let mut seen = BTreeSet::new();
        for i in &node.interfaces {
            if !seen.insert(&i.name) {
                return Err(invalid(format!("{name} declares interface {} twice", i.name)));
            }
            if !macs.insert(i.mac) {
                return Err(invalid(format!("duplicate MAC {} on {name}:{}", i.mac, i.name)));
            }
            match (node.kind, &i.addr) {
                (NodeKind::Switch, Some(_)) => {
                    return Err(invalid(format!("switch port {name}:{} has an address", i.name)))
                }
                (NodeKind::Router | NodeKind::Host, None) => {
                    return Err(invalid(format!("{name}:{} has no address", i.name)))
                }
                (_, Some(a)) => {
                    if let Some((other, _)) = addrs.insert(a.addr, (format!("{name}:{}", i.name), i.mac)) {
                        return Err(invalid(format!(
                            "duplicate address {} on {other} and {name}:{}",
                            a.addr, i.name
                        )));
                    }
                }
                (NodeKind::Switch, None) => {}
            }
        }
        if node.kind == NodeKind::Host && node.interfaces.len() != 1 {
            return Err(invalid(format!("host {name} must have exactly one interface")));
        }
    }

    let iface = |ep: &Endpoint| {
        doc.nodes
            .get(&ep.node)
            .and_then(|n| n.interfaces.iter().find(|i| i.name == ep.interface))
    };

    let mut peers: BTreeMap<Endpoint, Endpoint> = BTreeMap::new();
    for (name, node) in &doc.nodes {
        for i in &node.interfaces {
            let Some(peer) = &i.peer else { continue };
            let here = Endpoint::new(name, &i.name);
            let back = iface(peer).ok_or_else(|| invalid(format!("{here} peers with unknown {peer}")))?;
            if back.peer.as_ref() != Some(&here) {
                return Err(invalid(format!("asymmetric link: {here} -> {peer} is not mirrored")));
            }
            peers.insert(here, peer.clone());
        }
    }

    let mut links = HashMap::new();
    for l in &doc.links {
        let [a, b] = &l.ends;
        if peers.get(a) != Some(b) {
            return Err(invalid(format!("link {a} - {b} does not match the interfaces' peers")));
        }
        if links.contains_key(a) {
            return Err(invalid(format!("link {a} - {b} declared twice")));
        }
        links.insert(a.clone(), (b.clone(), l.latency_us));
        links.insert(b.clone(), (a.clone(), l.latency_us));
    }
    if let Some(ep) = peers.keys().find(|ep| !links.contains_key(*ep)) {
        return Err(invalid(format!("{ep} has a peer but no link latency")));
    }

    let kind_of = |n: &str| doc.nodes.get(n).map(|d| d.kind);
    let need_router = |section: &str, n: &str| match kind_of(n) {
        Some(NodeKind::Router) => Ok(()),
        Some(_) => Err(invalid(format!("{section}: {n} is not a router"))),
        None => Err(invalid(format!("{section}: unknown node {n}"))),
    };
    for n in doc
        .fibs
        .keys()
        .map(|n| ("fibs", n))
        .chain(doc.filters.keys().map(|n| ("filters", n)))
        .chain(doc.tunnels.keys().map(|n| ("tunnels", n)))
        .chain(doc.rpf.keys().map(|n| ("rpf", n)))
        .chain(doc.accept_macs.keys().map(|n| ("accept_macs", n)))
    {
        need_router(n.0, n.1)?;
    }
    for n in doc.apps.keys() {
        if kind_of(n) != Some(NodeKind::Host) {
            return Err(invalid(format!("apps: {n} is not a host")));
        }
    }

    let mut nodes = BTreeMap::new();
    for (name, nd) in &doc.nodes {
        let interfaces: Vec<Interface> = nd
            .interfaces
            .iter()
            .map(|i| Interface {
                name: i.name.clone(),
                mac: i.mac,
                addr: i.addr.map(|a| a.addr),
                prefix: i.addr.map(|a| a.prefix),
            })
            .collect();
        let node = match nd.kind {
            NodeKind::Switch => Node::Switch(SwitchNode {
                name: name.clone(),
                ports: interfaces,
                table: MacTable::default(),
            }),
            NodeKind::Host => {
                let mut state = NodeState::new(name.clone(), interfaces);
                let i = &state.interfaces[0];
                let mut fib = vec![FibEntry::new(
                    i.prefix.expect("validated"),
                    NextHop::Connected { out_if: i.name.clone() },
                )];
                if let Some(gw) = nd.gateway {
                    if !i.prefix.expect("validated").contains(gw) {
                        return Err(invalid(format!("gateway {gw} of {name} is not on-link")));
                    }
                    if !i.prefix.expect("validated").is_default() {
                        fib.push(FibEntry::new(
                            Prefix::default_route(),
                            NextHop::Via {
                                neighbor: gw,
                                out_if: i.name.clone(),
                            },
                        ));
                    }
                }
                state.tables.fib = crate::dataplane::Fib::from_entries(fib).map_err(|e| invalid(e.to_string()))?;
                Node::Host(HostNode {
                    state,
                    gateway: nd.gateway,
                    app: doc.apps.get(name).cloned(),
                })
            }
            NodeKind::Router => {
                let config = router_config(name, &interfaces, &doc)?;
                let mut state = NodeState::new(name.clone(), interfaces);
                if let Some(limit) = nd.punt_limit {
                    state.punt_limit = limit;
                }
                let mut r = RouterNode::new(state, config, nd.role)
                    .map_err(|e| invalid(format!("{name}: {e}")))?;
                r.connector_enabled = nd.connector;
                Node::Router(r)
            }
        };
        nodes.insert(name.clone(), node);
    }

    Ok(Topology {
        nodes,
        links,
        arp: addrs.into_iter().map(|(a, (_, mac))| (a, mac)).collect(),
        plans: doc.plans,
    })
}

/// Declared router state plus a connected route for each interface prefix
/// the document does not route explicitly.
fn router_config(name: &str, interfaces: &[Interface], doc: &TopologyDoc) -> Result<ConfigStore, TopologyError> {
    let has_if = |i: &str| interfaces.iter().any(|x| x.name == i);
    let check_if = |what: &str, i: &str| {
        if has_if(i) {
            Ok(())
        } else {
            Err(invalid(format!("{what} on {name} refers to unknown interface {i}")))
        }
    };

    let mut fib = doc.fibs.get(name).cloned().unwrap_or_default();
    for e in &fib {
        if let Some(i) = e.next_hop.out_if() {
            check_if("route", i)?;
        }
    }
    for i in interfaces {
        let p = i.prefix.expect("validated");
        if !fib.iter().any(|e| e.prefix == p) {
            fib.push(FibEntry::new(p, NextHop::Connected { out_if: i.name.clone() }));
        }
    }
    fib.sort_by_key(|e| e.prefix);

    let filters = doc.filters.get(name).cloned().unwrap_or_default();
    for f in &filters {
        f.validate().map_err(|e| invalid(format!("{name}: {e}")))?;
        for i in f.interfaces() {
            check_if("filter", i)?;
        }
    }
    let mut ids = BTreeSet::new();
    if let Some(f) = filters.iter().find(|f| !ids.insert(f.id)) {
        return Err(invalid(format!("{name}: filter id {} repeated", f.id)));
    }

    let tunnels = doc.tunnels.get(name).cloned().unwrap_or_default();
    for t in &tunnels {
        t.validate().map_err(|e| invalid(format!("{name}: {e}")))?;
        if !interfaces.iter().any(|i| i.addr == Some(t.local)) {
            return Err(invalid(format!("{name}: tunnel local {} is not a local address", t.local)));
        }
    }

    let rpf = doc.rpf.get(name).cloned().unwrap_or_default();
    for i in rpf.keys() {
        check_if("rpf", i)?;
    }
    let accept_macs = doc.accept_macs.get(name).cloned().unwrap_or_default();
    for (i, set) in &accept_macs {
        check_if("accept_macs", i)?;
        if let Some(m) = set.iter().find(|m| !m.is_multicast()) {
            return Err(invalid(format!("{name}:{i}: accept_macs entry {m} is not a group address")));
        }
    }

    Ok(ConfigStore {
        fib,
        filters,
        tunnels,
        rpf,
        accept_macs,
    })
}
