use lab_core::dataplane::DropReason;
use lab_core::scenarios::fixtures;
use lab_core::simnet::{
    load_topology, run, EventKind, EventTrace, FlowProto, FlowSpec, HostApp, PayloadSpec, Simulation, TopologyDoc,
    TopologyError,
};
use lab_core::{IpAddress, Packet, PacketUid};
use lab_core::netcore::TransportHeader;

const H0: &str = "198.51.100.10";
const H1: &str = "203.0.113.80";

fn ip(s: &str) -> IpAddress {
    s.parse().unwrap()
}

fn doc(text: &str) -> serde_json::Value {
    serde_json::from_str(text).unwrap()
}

fn load(v: &serde_json::Value) -> Result<lab_core::simnet::Topology, TopologyError> {
    load_topology(&v.to_string())
}

/// fig4 with no declared traffic.
fn quiet_fig4() -> lab_core::simnet::Topology {
    let mut v = doc(fixtures::FIG4);
    v["apps"]["H0"] = serde_json::json!("echo_server");
    load(&v).unwrap()
}

#[test]
fn fixtures_load() {
    let t = fixtures::fig4();
    assert_eq!(t.nodes.len(), 7);
    for n in ["H0", "R1", "R2", "R3", "H1", "R4", "A"] {
        assert!(t.nodes.contains_key(n), "{n}");
    }
    assert_eq!(fixtures::fig6().nodes.len(), 8);
    assert_eq!(fixtures::fig6_hairpin().nodes.len(), 8);
    let parsed: TopologyDoc = serde_json::from_str(fixtures::FIG4).unwrap();
    assert_eq!(parsed.links.len(), 7);
    serde_json::from_str::<serde_json::Value>(fixtures::SCHEMA).unwrap();
}

#[test]
fn one_echo_crosses_fig4_in_four_link_latencies() {
    let mut sim = Simulation::new(quiet_fig4(), 0).unwrap();
    let uid = sim.alloc_uid();
    let p = Packet::datagram(uid, ip(H0), ip(H1), 64, 1, TransportHeader::IcmpEcho { seq: 1 }, vec![]);
    sim.send_at(0, "H0", p);
    sim.run(1_000_000);
    let t = sim.trace();
    assert_eq!(
        t.arrivals(uid),
        vec![(1000, "R1"), (2000, "R2"), (3000, "R3"), (4000, "H1")]
    );
    let delivered: Vec<_> = t.deliveries("H1").collect();
    assert_eq!(delivered.len(), 1);
    assert_eq!(delivered[0].0, 4000);
    // the echo reply comes back the same way
    let back: Vec<_> = t.deliveries("H0").collect();
    assert_eq!(back.len(), 1);
    assert_eq!(back[0].0, 8000);
    assert!(matches!(back[0].1.transport, Some(TransportHeader::IcmpEchoReply { seq: 1 })));
    assert!(t.conservation_violations().is_empty());
}

#[test]
fn empty_flow_set_only_provisions() {
    let mut sim = Simulation::new(quiet_fig4(), 0).unwrap();
    sim.run(1_000_000);
    let t = sim.trace();
    assert_eq!(t.events.len(), 7);
    assert!(t.iter().all(|e| matches!(e.kind, EventKind::Provision { .. })));
}

#[test]
fn trace_is_ordered_and_round_trips() {
    let t = run(fixtures::fig6(), 10_000_000, 3).unwrap();
    for w in t.events.windows(2) {
        assert!((w[0].time, w[0].seq) < (w[1].time, w[1].seq));
    }
    let text = t.to_ndjson();
    let back = EventTrace::from_ndjson(&text).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.to_ndjson(), text);
    assert!(t.conservation_violations().is_empty());
}

#[test]
fn reruns_are_byte_identical() {
    let a = run(fixtures::fig4(), 10_000_000, 11).unwrap().to_ndjson();
    let b = run(fixtures::fig4(), 10_000_000, 11).unwrap().to_ndjson();
    assert_eq!(a, b);
}

#[test]
fn seed_changes_payloads_only() {
    let a = run(fixtures::fig4(), 10_000_000, 1).unwrap();
    let b = run(fixtures::fig4(), 10_000_000, 2).unwrap();
    assert_eq!(a.events.len(), b.events.len());
    let mut payload_differs = false;
    for (x, y) in a.events.iter().zip(&b.events) {
        assert_eq!((x.time, x.seq), (y.time, y.seq));
        let (EventKind::AppDeliver { packet: p, host: h }, EventKind::AppDeliver { packet: q, host: g }) =
            (&x.kind, &y.kind)
        else {
            continue;
        };
        assert_eq!(h, g);
        assert_eq!((p.uid, p.ip_stack()), (q.uid, q.ip_stack()));
        payload_differs |= p.payload != q.payload;
    }
    assert!(payload_differs);
}

#[test]
fn horizon_is_an_annotation() {
    let mut sim = Simulation::new(fixtures::fig4(), 0).unwrap();
    sim.run(50_000);
    assert!(sim.trace().horizon_reached());
    let before = sim.trace().deliveries("H1").count();
    assert!(before > 0 && before < 100);
    sim.run(10_000_000);
    assert_eq!(sim.trace().deliveries("H1").count(), 100);
}

#[test]
fn asymmetric_link_rejected() {
    let mut v = doc(fixtures::FIG4);
    v["nodes"]["R2"]["interfaces"][0]["peer"] = serde_json::json!("R3:ge0");
    assert!(matches!(load(&v), Err(TopologyError::Validation(m)) if m.contains("asymmetric")));
}

#[test]
fn duplicate_address_rejected() {
    let mut v = doc(fixtures::FIG4);
    v["nodes"]["R2"]["interfaces"][0]["addr"] = serde_json::json!("192.0.2.1/30");
    assert!(matches!(load(&v), Err(TopologyError::Validation(m)) if m.contains("duplicate address")));
}

#[test]
fn ipv6_rejected_as_validation_error() {
    let mut v = doc(fixtures::FIG4);
    v["nodes"]["H0"]["gateway"] = serde_json::json!("2001:db8::1");
    assert!(matches!(load(&v), Err(TopologyError::Validation(m)) if m.contains("IPv6")));
}

#[test]
fn schema_errors_carry_a_path() {
    let mut v = doc(fixtures::FIG4);
    v["nodes"]["R1"]["interfaces"][1]["mac"] = serde_json::json!("not-a-mac");
    match load(&v) {
        Err(TopologyError::Schema { path, .. }) => assert_eq!(path, "nodes.R1.interfaces[1].mac"),
        other => panic!("{other:?}"),
    }
    let mut v = doc(fixtures::FIG4);
    v["nodes"]["R1"]["colour"] = serde_json::json!("red");
    assert!(matches!(load(&v), Err(TopologyError::Schema { .. })));
}

#[test]
fn structural_rules() {
    let mut v = doc(fixtures::FIG6);
    v["nodes"]["S1"]["interfaces"][0]["addr"] = serde_json::json!("192.0.2.200/24");
    assert!(matches!(load(&v), Err(TopologyError::Validation(_))));

    let mut v = doc(fixtures::FIG4);
    v["links"].as_array_mut().unwrap().pop();
    assert!(matches!(load(&v), Err(TopologyError::Validation(m)) if m.contains("latency")));

    let mut v = doc(fixtures::FIG4);
    v["nodes"]["R1"]["interfaces"][0].as_object_mut().unwrap().remove("addr");
    assert!(matches!(load(&v), Err(TopologyError::Validation(_))));

    let mut v = doc(fixtures::FIG4);
    v["filters"]["H0"] = serde_json::json!([]);
    assert!(matches!(load(&v), Err(TopologyError::Validation(_))));
}

#[test]
fn connected_routes_are_added() {
    let t = fixtures::fig4();
    let r1 = t.router("R1").unwrap();
    let prefixes: Vec<String> = r1.config.fib.iter().map(|e| e.prefix.to_string()).collect();
    assert!(prefixes.contains(&"198.51.100.0/25".to_string()));
    assert!(prefixes.contains(&"192.0.2.0/30".to_string()));
}

#[test]
fn flow_source_must_match_host() {
    let mut sim = Simulation::new(quiet_fig4(), 0).unwrap();
    let spec = FlowSpec {
        src: ip(H1),
        dst: ip(H0),
        protocol: FlowProto::Udp,
        src_port: 1,
        dst_port: 2,
        count: 1,
        interval_us: 0,
        start_us: 0,
        payload: PayloadSpec::Text("x".into()),
        start_ttl: 64,
    };
    assert!(sim.add_flow("H0", spec.clone()).is_err());
    assert!(sim.add_flow("H1", FlowSpec { count: 0, ..spec.clone() }).is_err());
    assert!(sim.add_flow("H1", spec).is_ok());
}

#[test]
fn ttl_expiry_answers_with_time_exceeded() {
    let mut sim = Simulation::new(quiet_fig4(), 0).unwrap();
    let uid = sim.alloc_uid();
    let p = Packet::datagram(uid, ip(H0), ip(H1), 2, 0x8002, TransportHeader::IcmpEcho { seq: 2 }, vec![]);
    sim.send_at(0, "H0", p);
    sim.run(1_000_000);
    let t = sim.trace();
    assert_eq!(t.drop_count("R2", DropReason::Ttl), 1);
    let got: Vec<_> = t.deliveries("H0").collect();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].1.outer().src, ip("192.0.2.2"));
    assert_eq!(got[0].0, 4000);
}

#[test]
fn unknown_unicast_floods_and_others_drop_it() {
    let t = run(fixtures::fig6(), 10_000_000, 0).unwrap();
    assert_eq!(t.deliveries("H1").count(), 100);
    assert!(t.drop_count("R4", DropReason::NotAccepted) > 0);
    assert!(t.conservation_violations().is_empty());
}

#[test]
fn host_app_can_be_swapped() {
    let mut sim = Simulation::new(quiet_fig4(), 0).unwrap();
    sim.set_host_app("H1", HostApp::EchoServer).unwrap();
    assert!(sim.set_host_app("R1", HostApp::EchoServer).is_err());
    let uid = PacketUid(999);
    let p = Packet::datagram(uid, ip(H0), ip("192.0.2.1"), 64, 0, TransportHeader::IcmpEcho { seq: 0 }, vec![]);
    sim.send_at(0, "H0", p);
    sim.run(1_000_000);
    // addressed to a router: punted, not forwarded
    assert!(sim
        .trace()
        .iter()
        .any(|e| matches!(&e.kind, EventKind::Punt { node, uid: u, .. } if node == "R1" && *u == uid)));
}
