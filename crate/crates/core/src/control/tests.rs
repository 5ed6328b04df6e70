use proptest::prelude::*;

use super::*;
use crate::dataplane::{Action, FibEntry, FilterRule, Interface, MatchSpec, NextHop, NodeState, Origin};
use crate::netcore::{IpAddress, MacAddress, Prefix, TunnelMode, TunnelSpec};

fn ip(s: &str) -> IpAddress {
    s.parse().unwrap()
}

fn router(name: &str, base: u8) -> RouterNode {
    let iface = |n: &str, last: u8| Interface {
        name: n.into(),
        mac: MacAddress(0x0200_0000_0000 | u64::from(base) << 8 | u64::from(last)),
        addr: Some(IpAddress::new(192, 0, 2, base + last)),
        prefix: Some(Prefix::truncating(IpAddress::new(192, 0, 2, base + last), 29)),
    };
    let config = ConfigStore {
        fib: vec![FibEntry::new(
            Prefix::default_route(),
            NextHop::Via {
                neighbor: IpAddress::new(192, 0, 2, base + 2),
                out_if: "ge0".into(),
            },
        )],
        ..Default::default()
    };
    let state = NodeState::new(name, vec![iface("ge0", 0), iface("ge1", 1)]);
    RouterNode::new(state, config, Role::Transit).unwrap()
}

fn fleet() -> Fleet {
    Fleet::new([router("R1", 8), router("R2", 16), router("R3", 24)])
}

fn redirect_filter(id: u32, remote: &str, local: IpAddress) -> EntryPayload {
    EntryPayload::Filter(FilterRule {
        id,
        priority: 0,
        matches: MatchSpec {
            dst: Some("203.0.113.80/32".parse().unwrap()),
            protocol: Some(6),
            ..Default::default()
        },
        action: Action::RedirectTunnel {
            tunnel: TunnelSpec::new(TunnelMode::IpIp, local, ip(remote)).unwrap(),
        },
        origin: Origin::Config,
    })
}

#[test]
fn add_redirect_is_invisible_to_config_dump() {
    let mut f = fleet();
    let before_cfg = dump_config(&f.routers["R2"]);
    let before_live = dump_live(&f.routers["R2"]);
    assert_eq!(before_cfg, before_live);

    let id = connector_apply(
        &mut f,
        &FlowModCommand::add("R2", redirect_filter(100, "192.0.2.66", IpAddress::new(192, 0, 2, 16))),
    )
    .unwrap();
    let r2 = &f.routers["R2"];
    assert_eq!(r2.state.tables.filters.len(), 1);
    assert_eq!(dump_config(r2), before_cfg);
    assert_ne!(dump_live(r2), before_cfg);
    assert_eq!(f.injections.len(), 1);

    let report = audit_node(r2);
    assert_eq!(report.anomalies.len(), 1);
    assert_eq!(report.anomalies[0].next_hop_class, NextHopClass::Tunnel);
    assert_eq!(report.anomalies[0].origin, AnomalyOrigin::Ephemeral);
    assert_eq!(report.anomalies[0].entry_id, Some(id));

    connector_apply(&mut f, &FlowModCommand::remove("R2", id)).unwrap();
    assert_eq!(dump_live(&f.routers["R2"]), before_live);
    assert!(audit_node(&f.routers["R2"]).is_clean());
}

#[test]
fn dumps_are_stable() {
    let f = fleet();
    assert_eq!(dump_config(&f.routers["R1"]), dump_config(&f.routers["R1"]));
    assert_eq!(dump_live(&f.routers["R1"]), dump_live(&f.routers["R1"]));
    assert!(audit_node(&f.routers["R1"]).is_clean());
}

#[test]
fn unicast_replicate_target_rejected() {
    let mut f = fleet();
    let payload = EntryPayload::Filter(FilterRule {
        id: 1,
        priority: 0,
        matches: MatchSpec {
            src: Some("198.51.100.10/32".parse().unwrap()),
            ..Default::default()
        },
        action: Action::ReplicateMac {
            dst_mac: "00:aa:bb:cc:dd:ee".parse().unwrap(),
            out_if: "ge1".into(),
        },
        origin: Origin::Config,
    });
    let err = connector_apply(&mut f, &FlowModCommand::add("R1", payload)).unwrap_err();
    assert!(matches!(err, ControlError::Validation(_)));
    assert!(f.routers["R1"].ephemeral.is_empty());
}

#[test]
fn unknown_interface_and_disabled_connector() {
    let mut f = fleet();
    let payload = EntryPayload::AcceptMac {
        interface: "ge9".into(),
        mac: "01:00:5e:7f:00:01".parse().unwrap(),
    };
    assert!(matches!(
        connector_apply(&mut f, &FlowModCommand::add("R1", payload.clone())),
        Err(ControlError::Validation(_))
    ));
    f.routers.get_mut("R1").unwrap().connector_enabled = false;
    let ok = EntryPayload::AcceptMac {
        interface: "ge0".into(),
        mac: "01:00:5e:7f:00:01".parse().unwrap(),
    };
    assert_eq!(
        connector_apply(&mut f, &FlowModCommand::add("R1", ok)),
        Err(ControlError::ConnectorDisabled("R1".into()))
    );
    assert!(matches!(
        connector_apply(&mut f, &FlowModCommand::remove("R9", EntryId(1))),
        Err(ControlError::UnknownNode(_))
    ));
}

#[test]
fn accept_mac_and_policy_classes() {
    let mut f = fleet();
    connector_apply(
        &mut f,
        &FlowModCommand::add(
            "R1",
            EntryPayload::AcceptMac {
                interface: "ge0".into(),
                mac: "01:00:5e:7f:00:01".parse().unwrap(),
            },
        ),
    )
    .unwrap();
    connector_apply(
        &mut f,
        &FlowModCommand::add(
            "R1",
            EntryPayload::Filter(FilterRule {
                id: 9,
                priority: 5,
                matches: MatchSpec {
                    protocol: Some(17),
                    ..Default::default()
                },
                action: Action::Drop,
                origin: Origin::Config,
            }),
        ),
    )
    .unwrap();
    let report = audit_node(&f.routers["R1"]);
    assert_eq!(report.summary.get(&NextHopClass::Other), Some(&1));
    assert_eq!(report.summary.get(&NextHopClass::PolicyRoute), Some(&1));
}

#[test]
fn ephemeral_fib_over_config_prefix_is_a_mismatch() {
    let mut f = fleet();
    let mut e = FibEntry::new(Prefix::default_route(), NextHop::Discard);
    e.origin = Origin::Config;
    connector_apply(&mut f, &FlowModCommand::add("R3", EntryPayload::Fib(e))).unwrap();
    let r3 = &f.routers["R3"];
    assert_eq!(r3.conflicts.len(), 1);
    let report = audit_node(r3);
    assert_eq!(report.anomalies.len(), 1);
    assert_eq!(report.anomalies[0].origin, AnomalyOrigin::ConfigMismatch);
}

#[test]
fn fanout_to_three_routers() {
    let mut f = fleet();
    let cmds: Vec<_> = [("R1", 8), ("R2", 16), ("R3", 24)]
        .iter()
        .map(|(n, b)| FlowModCommand::add(*n, redirect_filter(100, "192.0.2.66", IpAddress::new(192, 0, 2, *b))))
        .collect();
    let out = controller_fanout(&mut f, &cmds);
    assert_eq!(out.len(), 3);
    for (node, o) in &out {
        assert_eq!(o.applied.len(), 1, "{node}");
        assert!(o.error.is_none());
        let report = audit_node(&f.routers[node]);
        assert_eq!(report.summary.get(&NextHopClass::Tunnel), Some(&1));
    }
}

#[test]
fn fanout_isolates_a_bad_node() {
    let mut f = fleet();
    let mut cmds: Vec<_> = [("R1", 8), ("R3", 24)]
        .iter()
        .map(|(n, b)| FlowModCommand::add(*n, redirect_filter(100, "192.0.2.66", IpAddress::new(192, 0, 2, *b))))
        .collect();
    // R2: one good command followed by a bad one; neither may stick
    cmds.push(FlowModCommand::add("R2", redirect_filter(100, "192.0.2.66", IpAddress::new(192, 0, 2, 16))));
    cmds.push(FlowModCommand::add(
        "R2",
        EntryPayload::AcceptMac {
            interface: "nope".into(),
            mac: MacAddress(1),
        },
    ));
    let out = controller_fanout(&mut f, &cmds);
    assert_eq!(out["R1"].applied.len(), 1);
    assert_eq!(out["R3"].applied.len(), 1);
    assert!(out["R2"].applied.is_empty());
    assert!(matches!(out["R2"].error, Some(ControlError::Validation(_))));
    assert!(f.routers["R2"].ephemeral.is_empty());

    assert!(controller_fanout(&mut f, &[]).is_empty());
}

#[test]
fn wire_protocol_round_trip() {
    let mut f = fleet();
    let cmd = FlowModCommand::add("R2", redirect_filter(7, "192.0.2.66", IpAddress::new(192, 0, 2, 16)));
    let line = serde_json::to_string(&cmd).unwrap();
    assert!(line.starts_with(r#"{"verb":"add","target":"R2","payload":{"filter":"#));
    let resp: serde_json::Value = serde_json::from_str(&handle_wire_line(&mut f, &line)).unwrap();
    let id = resp["ok"].as_u64().unwrap();

    let dup: serde_json::Value = serde_json::from_str(&handle_wire_line(&mut f, &line)).unwrap();
    assert_eq!(dup["error"], "validation");

    let bad: serde_json::Value = serde_json::from_str(&handle_wire_line(&mut f, "{nope")).unwrap();
    assert_eq!(bad["error"], "parse");

    let remove = format!(r#"{{"verb":"remove","target":"R2","payload":{{"entry_id":{id}}}}}"#);
    let resp: serde_json::Value = serde_json::from_str(&handle_wire_line(&mut f, &remove)).unwrap();
    assert_eq!(resp["ok"], id);
    let again: serde_json::Value = serde_json::from_str(&handle_wire_line(&mut f, &remove)).unwrap();
    assert_eq!(again["error"], "unknown_entry");
}

#[test]
fn serve_session_answers_each_line() {
    let mut f = fleet();
    let cmd = FlowModCommand::add("R1", redirect_filter(7, "192.0.2.66", IpAddress::new(192, 0, 2, 8)));
    let input = format!("{}\n\n{}\n", serde_json::to_string(&cmd).unwrap(), "garbage");
    let mut out = Vec::new();
    let n = serve_session(&mut f, input.as_bytes(), &mut out).unwrap();
    assert_eq!(n, 2);
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], r#"{"ok":1}"#);
    assert!(lines[1].contains("\"parse\""));
}

#[test]
fn rolling_update_replaces_match() {
    let mut f = fleet();
    let id = connector_apply(
        &mut f,
        &FlowModCommand::add("R2", redirect_filter(7, "192.0.2.66", IpAddress::new(192, 0, 2, 16))),
    )
    .unwrap();
    let wider = MatchSpec {
        dst: Some("203.0.113.0/24".parse().unwrap()),
        ..Default::default()
    };
    assert_eq!(update_filter_match(&mut f, id, wider.clone()).unwrap(), "R2");
    assert_eq!(f.routers["R2"].state.tables.filters[0].matches, wider);
    assert_eq!(
        update_filter_match(&mut f, EntryId(999), wider),
        Err(ControlError::UnknownEntry(EntryId(999)))
    );
    assert!(update_filter_match(&mut f, id, MatchSpec::default()).is_err());
}

#[derive(Clone, Debug)]
enum Step {
    Add(usize, u8),
    Remove(usize),
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        (0usize..3, 0u8..4).prop_map(|(n, k)| Step::Add(n, k)),
        (0usize..40).prop_map(Step::Remove),
    ]
}

proptest! {
    #[test]
    fn audit_tracks_ephemeral_entries(steps in proptest::collection::vec(step(), 0..=20)) {
        let mut f = fleet();
        let names = ["R1", "R2", "R3"];
        let cfg_before: Vec<_> = names.iter().map(|n| dump_config(&f.routers[*n])).collect();
        let live_before: Vec<_> = names.iter().map(|n| dump_live(&f.routers[*n])).collect();
        let mut live_ids: Vec<(usize, EntryId)> = Vec::new();
        let mut next_filter = 1000;
        for s in steps {
            match s {
                Step::Add(n, kind) => {
                    let base = [8u8, 16, 24][n];
                    next_filter += 1;
                    let payload = match kind {
                        0 => redirect_filter(next_filter, "192.0.2.66", IpAddress::new(192, 0, 2, base)),
                        1 => EntryPayload::AcceptMac { interface: "ge1".into(), mac: MacAddress(0x0100_5e00_0000 + u64::from(next_filter)) },
                        2 => EntryPayload::Tunnel(TunnelSpec::new(TunnelMode::Gre, IpAddress::new(192, 0, 2, base), ip("192.0.2.66")).unwrap()),
                        _ => EntryPayload::Fib(FibEntry::new(Prefix::truncating(IpAddress(next_filter << 8), 24), NextHop::Discard)),
                    };
                    let id = connector_apply(&mut f, &FlowModCommand::add(names[n], payload)).unwrap();
                    live_ids.push((n, id));
                }
                Step::Remove(i) => {
                    if live_ids.is_empty() { continue; }
                    let (n, id) = live_ids.remove(i % live_ids.len());
                    connector_apply(&mut f, &FlowModCommand::remove(names[n], id)).unwrap();
                }
            }
            for (i, n) in names.iter().enumerate() {
                let r = &f.routers[*n];
                prop_assert_eq!(&dump_config(r), &cfg_before[i]);
                prop_assert_eq!(audit_node(r).anomalies.len(), r.ephemeral.len());
            }
        }
        for (n, id) in live_ids.drain(..) {
            connector_apply(&mut f, &FlowModCommand::remove(names[n], id)).unwrap();
        }
        for (i, n) in names.iter().enumerate() {
            prop_assert_eq!(&dump_live(&f.routers[*n]), &live_before[i]);
        }
    }
}
