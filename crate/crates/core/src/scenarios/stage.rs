use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::control::{connector_apply, ControlTarget, EntryPayload, FlowModCommand, RouterNode};
use crate::dataplane::{Action, EntryId, FilterRule, MatchSpec, NextHop, Origin};
use crate::netcore::{IpAddress, MacAddress, TunnelMode, TunnelSpec};
use crate::simnet::{AidHost, HostApp, Mutator, ReturnMode, Simulation};

/// Priority given to staged captive filters: ahead of anything configured.
pub const CAPTIVE_PRIORITY: i32 = -1000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnKind {
    #[default]
    Direct,
    Hairpin,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedirectPlan {
    pub router: String,
    pub filter: MatchSpec,
    pub aid: IpAddress,
    pub tunnel_mode: TunnelMode,
    #[serde(default)]
    pub return_mode: ReturnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutator: Option<Mutator>,
    /// Aid leaves the inner TTL untouched.
    #[serde(default)]
    pub stealth_aid: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicatePlan {
    pub ingress_router: String,
    pub normal_router: String,
    pub exfil_router: String,
    pub switch: String,
    pub mcast_mac: MacAddress,
    pub filter: MatchSpec,
    pub aid: IpAddress,
    #[serde(default)]
    pub tunnel_mode: Option<TunnelMode>,
}

fn router<'a>(sim: &'a Simulation, name: &str) -> Result<&'a RouterNode, ScenarioError> {
    match sim.topology().nodes.get(name) {
        None => Err(ScenarioError::UnknownNode(name.to_string())),
        Some(_) => sim
            .router(name)
            .ok_or_else(|| ScenarioError::NotARouter(name.to_string())),
    }
}

/// Host owning `aid` and the router's egress address toward it.
fn aid_path(sim: &Simulation, r: &RouterNode, aid: IpAddress) -> Result<(String, IpAddress), ScenarioError> {
    let host = sim
        .topology()
        .host_by_addr(aid)
        .ok_or(ScenarioError::UnreachableAid(aid))?
        .to_string();
    let out_if = match r.state.tables.fib.lookup(aid).map(|e| &e.next_hop) {
        Some(NextHop::Via { out_if, .. } | NextHop::Connected { out_if }) => out_if,
        _ => return Err(ScenarioError::UnreachableAid(aid)),
    };
    let local = r
        .state
        .interface(out_if)
        .and_then(|i| i.addr)
        .ok_or(ScenarioError::UnreachableAid(aid))?;
    Ok((host, local))
}

/// An id above every filter id in use on the router, at least 1000.
fn free_filter_id(r: &RouterNode) -> u32 {
    r.config
        .filters
        .iter()
        .chain(r.ephemeral.entries.iter().filter_map(|e| match &e.payload {
            EntryPayload::Filter(f) => Some(f),
            _ => None,
        }))
        .map(|f| f.id + 1)
        .chain([1000])
        .max()
        .unwrap_or(1000)
}

fn captive(id: u32, matches: MatchSpec, action: Action) -> EntryPayload {
    EntryPayload::Filter(FilterRule {
        id,
        priority: CAPTIVE_PRIORITY,
        matches,
        action,
        origin: Origin::Config,
    })
}

/// Applies commands in order; on the first failure removes what was
/// already applied and returns the error.
fn apply_all(sim: &mut Simulation, cmds: Vec<FlowModCommand>) -> Result<Vec<EntryId>, ScenarioError> {
    let mut done: Vec<(String, EntryId)> = Vec::new();
    for c in cmds {
        match connector_apply(sim, &c) {
            Ok(id) => done.push((c.target.clone(), id)),
            Err(e) => {
                for (node, id) in done.into_iter().rev() {
                    connector_apply(sim, &FlowModCommand::remove(node, id))
                        .expect("removing a just-installed entry");
                }
                return Err(e.into());
            }
        }
    }
    Ok(done.into_iter().map(|(_, id)| id).collect())
}

/// Installs a protocol-selective redirect through a tunnel to the aid and
/// provisions the aid's return path. One entry in Direct mode; Hairpin
/// adds the tunnel endpoint the aid sends processed traffic back through.
pub fn stage_redirect(sim: &mut Simulation, plan: &RedirectPlan) -> Result<Vec<EntryId>, ScenarioError> {
    if plan.filter.is_empty() {
        return Err(ScenarioError::EmptyFilter);
    }
    let r = router(sim, &plan.router)?;
    let (aid_host, local) = aid_path(sim, r, plan.aid)?;
    let tunnel = TunnelSpec::new(plan.tunnel_mode, local, plan.aid).map_err(|e| ScenarioError::Plan(e.to_string()))?;
    let id = free_filter_id(r);

    let mut cmds = vec![FlowModCommand::add(
        &plan.router,
        captive(id, plan.filter.clone(), Action::RedirectTunnel { tunnel }),
    )];
    let mode = match plan.return_mode {
        ReturnKind::Direct => ReturnMode::Direct,
        ReturnKind::Hairpin => {
            cmds.push(FlowModCommand::add(&plan.router, EntryPayload::Tunnel(tunnel)));
            ReturnMode::Hairpin {
                tunnel: tunnel.reversed(),
            }
        }
    };
    let ids = apply_all(sim, cmds)?;
    sim.set_host_app(
        &aid_host,
        HostApp::Aid(AidHost {
            mode,
            mutator: plan.mutator.clone(),
            stealth: plan.stealth_aid,
            capture_log: Vec::new(),
        }),
    )?;
    Ok(ids)
}

/// Swaps the match part of a staged filter in one step.
pub fn update_rolling_filter<T: ControlTarget + ?Sized>(
    target: &mut T,
    entry_id: EntryId,
    new_match: MatchSpec,
) -> Result<EntryId, ScenarioError> {
    crate::control::update_filter_match(target, entry_id, new_match)?;
    Ok(entry_id)
}

/// Router interface whose link lands on `switch`.
fn segment_if(sim: &Simulation, r: &RouterNode, switch: &str) -> Result<String, ScenarioError> {
    r.state
        .interfaces
        .iter()
        .find(|i| {
            sim.topology()
                .link(r.name(), &i.name)
                .is_some_and(|l| l.peer.node == switch)
        })
        .map(|i| i.name.clone())
        .ok_or_else(|| ScenarioError::NotOnSharedSegment(r.name().to_string()))
}

/// Replicates matching traffic onto the shared segment as a group-MAC frame
/// that both the normal next hop and the exfiltration router accept. The
/// switch is left untouched.
pub fn stage_replicate(sim: &mut Simulation, plan: &ReplicatePlan) -> Result<Vec<EntryId>, ScenarioError> {
    if !plan.mcast_mac.is_multicast() {
        return Err(ScenarioError::UnicastGroup(plan.mcast_mac));
    }
    if plan.filter.is_empty() {
        return Err(ScenarioError::EmptyFilter);
    }
    if sim.topology().nodes.get(&plan.switch).map(|n| n.kind()) != Some(crate::simnet::NodeKind::Switch) {
        return Err(ScenarioError::NotOnSharedSegment(plan.switch.clone()));
    }
    let ingress = router(sim, &plan.ingress_router)?;
    let normal = router(sim, &plan.normal_router)?;
    let exfil = router(sim, &plan.exfil_router)?;
    let ingress_if = segment_if(sim, ingress, &plan.switch)?;
    let normal_if = segment_if(sim, normal, &plan.switch)?;
    let exfil_if = segment_if(sim, exfil, &plan.switch)?;
    let (aid_host, local) = aid_path(sim, exfil, plan.aid)?;
    let tunnel = TunnelSpec::new(plan.tunnel_mode.unwrap_or(TunnelMode::Gre), local, plan.aid)
        .map_err(|e| ScenarioError::Plan(e.to_string()))?;
    let ingress_id = free_filter_id(ingress);
    let exfil_id = free_filter_id(exfil);

    let mut exfil_match = plan.filter.clone();
    exfil_match.in_if = Some(exfil_if.clone());
    let cmds = vec![
        FlowModCommand::add(
            &plan.ingress_router,
            captive(
                ingress_id,
                plan.filter.clone(),
                Action::ReplicateMac {
                    dst_mac: plan.mcast_mac,
                    out_if: ingress_if,
                },
            ),
        ),
        FlowModCommand::add(
            &plan.normal_router,
            EntryPayload::AcceptMac {
                interface: normal_if,
                mac: plan.mcast_mac,
            },
        ),
        FlowModCommand::add(
            &plan.exfil_router,
            EntryPayload::AcceptMac {
                interface: exfil_if,
                mac: plan.mcast_mac,
            },
        ),
        FlowModCommand::add(
            &plan.exfil_router,
            captive(exfil_id, exfil_match, Action::RedirectTunnel { tunnel }),
        ),
    ];
    let ids = apply_all(sim, cmds)?;
    sim.set_host_app(
        &aid_host,
        HostApp::Aid(AidHost {
            mode: ReturnMode::Sink,
            ..Default::default()
        }),
    )?;
    Ok(ids)
}
