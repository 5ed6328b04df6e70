//! Attack staging, detection tooling and the bundled fixtures.

mod detect;
mod probe;
mod stage;

use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use thiserror::Error;

use crate::control::{controller_fanout, ControlError, FlowModCommand, NodeOutcome};
use crate::netcore::{IpAddress, MacAddress};
use crate::simnet::{load_topology, Simulation, Topology, TopologyError};

pub use detect::{delivery_delays, detect_latency_shift, dominant_flow, fleet_audit, FlowKey, LatencyReport};
pub use probe::{
    detect_divergence, traceroute, DivergenceReport, Hop, ProbeProto, Responder, TracePath, Verdict,
    DEFAULT_MAX_TTL, PROBE_SPACING_US,
};
pub use stage::{
    stage_redirect, stage_replicate, update_rolling_filter, RedirectPlan, ReplicatePlan, ReturnKind,
    CAPTIVE_PRIORITY,
};

/// Default run length: ten simulated seconds.
pub const DEFAULT_HORIZON_US: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("aid {0} is not reachable")]
    UnreachableAid(IpAddress),
    #[error("`{0}` is not attached to the shared segment")]
    NotOnSharedSegment(String),
    #[error("filter has no match fields")]
    EmptyFilter,
    #[error("{0} is not a group address")]
    UnicastGroup(MacAddress),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("`{0}` is not a router")]
    NotARouter(String),
    #[error("`{0}` is not a host")]
    NotAHost(String),
    #[error("paths probe different targets ({0} vs {1})")]
    MismatchedTargets(IpAddress, IpAddress),
    #[error("flow {0} has no deliveries")]
    FlowAbsent(FlowKey),
    #[error("topology has no `{0}` plan")]
    MissingPlan(String),
    #[error("bad plan: {0}")]
    Plan(String),
}

/// Reads a named plan from the topology document's `plans` section.
pub fn plan<T: DeserializeOwned>(topology: &Topology, name: &str) -> Result<T, ScenarioError> {
    let v = topology
        .plans
        .get(name)
        .ok_or_else(|| ScenarioError::MissingPlan(name.to_string()))?;
    serde_json::from_value(v.clone()).map_err(|e| ScenarioError::Plan(format!("{name}: {e}")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scenario {
    Baseline,
    Redirect,
    Replicate,
    Fanout,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Baseline => "baseline",
            Scenario::Redirect => "redirect",
            Scenario::Replicate => "replicate",
            Scenario::Fanout => "fanout",
        })
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "baseline" => Scenario::Baseline,
            "redirect" => Scenario::Redirect,
            "replicate" => Scenario::Replicate,
            "fanout" => Scenario::Fanout,
            _ => return Err(format!("unknown scenario `{s}`")),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StageOptions {
    /// Overrides the redirect plan's return mode.
    pub return_mode: Option<ReturnKind>,
    pub stealth_aid: bool,
}

/// What staging a scenario did.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Staged {
    pub entries: Vec<crate::dataplane::EntryId>,
    pub fanout: std::collections::BTreeMap<String, NodeOutcome>,
}

/// Stages `scenario` on a fresh simulation using the topology's plans.
pub fn stage(sim: &mut Simulation, scenario: Scenario, opts: &StageOptions) -> Result<Staged, ScenarioError> {
    let mut out = Staged::default();
    match scenario {
        Scenario::Baseline => {}
        Scenario::Redirect => {
            let mut p: RedirectPlan = plan(sim.topology(), "redirect")?;
            if let Some(m) = opts.return_mode {
                p.return_mode = m;
            }
            p.stealth_aid |= opts.stealth_aid;
            out.entries = stage_redirect(sim, &p)?;
        }
        Scenario::Replicate => {
            let p: ReplicatePlan = plan(sim.topology(), "replicate")?;
            out.entries = stage_replicate(sim, &p)?;
        }
        Scenario::Fanout => {
            let cmds: Vec<FlowModCommand> = plan(sim.topology(), "fanout")?;
            out.fanout = controller_fanout(sim, &cmds);
            out.entries = out.fanout.values().flat_map(|o| o.applied.iter().copied()).collect();
        }
    }
    Ok(out)
}

/// Loads, stages and runs a scenario to `horizon`.
pub fn run_scenario(
    topology: Topology,
    scenario: Scenario,
    opts: &StageOptions,
    seed: u64,
    horizon: u64,
) -> Result<Simulation, ScenarioError> {
    let mut sim = Simulation::new(topology, seed)?;
    stage(&mut sim, scenario, opts)?;
    sim.run(horizon);
    Ok(sim)
}

/// The bundled topology documents.
pub mod fixtures {
    use super::*;

    pub const FIG4: &str = include_str!("../../fixtures/fig4.topo");
    pub const FIG6: &str = include_str!("../../fixtures/fig6.topo");
    pub const FIG6_HAIRPIN: &str = include_str!("../../fixtures/fig6_hairpin.topo");
    pub const SCHEMA: &str = include_str!("../../fixtures/topology.schema.json");

    /// Bundled document by name (`fig4`, `fig6`, `fig6_hairpin`).
    pub fn document(name: &str) -> Option<&'static str> {
        match name.trim_end_matches(".topo") {
            "fig4" => Some(FIG4),
            "fig6" => Some(FIG6),
            "fig6_hairpin" => Some(FIG6_HAIRPIN),
            _ => None,
        }
    }

    pub fn fig4() -> Topology {
        load_topology(FIG4).expect("bundled fixture loads")
    }

    pub fn fig6() -> Topology {
        load_topology(FIG6).expect("bundled fixture loads")
    }

    pub fn fig6_hairpin() -> Topology {
        load_topology(FIG6_HAIRPIN).expect("bundled fixture loads")
    }
}
