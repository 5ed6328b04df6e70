//! Flow-mod style command interface for installing ephemeral state.
//!
//! Wire form is one JSON object per line:
//!
//! ```text
//! {"verb":"add","target":"R2","payload":{"filter":{...}}}
//! {"verb":"remove","target":"R2","payload":{"entry_id":3}}
//! ```
//!
//! answered by `{"ok":3}` or `{"error":"validation","detail":"..."}`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataplane::{EntryId, MatchSpec};

use super::store::{compile_fib, EntryPayload, EphemeralEntry, InstallPath, RouterNode};
use super::ControlError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Add,
    Remove,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CommandPayload {
    Entry(EntryPayload),
    Handle { entry_id: EntryId },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowModCommand {
    pub verb: Verb,
    pub target: String,
    pub payload: CommandPayload,
}

impl FlowModCommand {
    pub fn add(target: impl Into<String>, payload: EntryPayload) -> Self {
        FlowModCommand {
            verb: Verb::Add,
            target: target.into(),
            payload: CommandPayload::Entry(payload),
        }
    }

    pub fn remove(target: impl Into<String>, entry_id: EntryId) -> Self {
        FlowModCommand {
            verb: Verb::Remove,
            target: target.into(),
            payload: CommandPayload::Handle { entry_id },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectOp {
    Add,
    Remove,
    Update,
}

/// Whatever owns the routers: the simulation engine, or a test harness.
pub trait ControlTarget {
    fn router_mut(&mut self, node: &str) -> Result<&mut RouterNode, ControlError>;
    fn router_names(&self) -> Vec<String>;
    fn allocate_entry_id(&mut self) -> EntryId;
    /// Current simulated time in microseconds.
    fn now(&self) -> u64;
    fn record_inject(&mut self, node: &str, op: InjectOp, entry: &EphemeralEntry);
}

/// Checks a payload against the target router's interfaces and tables.
pub fn validate_payload(router: &RouterNode, payload: &EntryPayload) -> Result<(), ControlError> {
    let state = &router.state;
    let need_if = |name: &str| {
        if state.has_interface(name) {
            Ok(())
        } else {
            Err(ControlError::Validation(format!(
                "{} has no interface `{name}`",
                router.name()
            )))
        }
    };
    match payload {
        EntryPayload::Filter(rule) => {
            rule.validate().map_err(|e| ControlError::Validation(e.to_string()))?;
            for i in rule.interfaces() {
                need_if(i)?;
            }
            let clash = router.config.filters.iter().any(|f| f.id == rule.id)
                || router.ephemeral.entries.iter().any(|e| {
                    matches!(&e.payload, EntryPayload::Filter(f) if f.id == rule.id)
                });
            if clash {
                return Err(ControlError::Validation(format!(
                    "filter id {} already exists on {}",
                    rule.id,
                    router.name()
                )));
            }
        }
        EntryPayload::Fib(entry) => {
            if let Some(i) = entry.next_hop.out_if() {
                need_if(i)?;
            }
        }
        EntryPayload::Tunnel(t) => {
            t.validate().map_err(|e| ControlError::Validation(e.to_string()))?;
            if !state.is_local(t.local) {
                return Err(ControlError::Validation(format!(
                    "tunnel local address {} is not on {}",
                    t.local,
                    router.name()
                )));
            }
        }
        EntryPayload::AcceptMac { interface, .. } => need_if(interface)?,
    }
    Ok(())
}

fn install(router: &mut RouterNode, mut payload: EntryPayload, id: EntryId, now: u64) -> EphemeralEntry {
    payload.tag_origin(id);
    let entry = EphemeralEntry {
        entry_id: id,
        payload,
        installed_at: now,
        via: InstallPath::Connector,
    };
    router.ephemeral.entries.push(entry.clone());
    compile_fib(router);
    entry
}

fn enabled(router: &RouterNode) -> Result<(), ControlError> {
    if router.connector_enabled {
        Ok(())
    } else {
        Err(ControlError::ConnectorDisabled(router.name().to_string()))
    }
}

/// Validates and installs (or removes) one ephemeral entry, recompiles the
/// node's tables and logs the injection.
pub fn connector_apply<T: ControlTarget + ?Sized>(
    target: &mut T,
    cmd: &FlowModCommand,
) -> Result<EntryId, ControlError> {
    let now = target.now();
    match (&cmd.verb, &cmd.payload) {
        (Verb::Add, CommandPayload::Entry(payload)) => {
            {
                let router = target.router_mut(&cmd.target)?;
                enabled(router)?;
                validate_payload(router, payload)?;
            }
            let id = target.allocate_entry_id();
            let entry = install(target.router_mut(&cmd.target)?, payload.clone(), id, now);
            target.record_inject(&cmd.target, InjectOp::Add, &entry);
            Ok(id)
        }
        (Verb::Remove, CommandPayload::Handle { entry_id }) => {
            let router = target.router_mut(&cmd.target)?;
            enabled(router)?;
            let entry = router
                .ephemeral
                .remove(*entry_id)
                .ok_or(ControlError::UnknownEntry(*entry_id))?;
            compile_fib(router);
            target.record_inject(&cmd.target, InjectOp::Remove, &entry);
            Ok(*entry_id)
        }
        (Verb::Add, CommandPayload::Handle { .. }) => Err(ControlError::Validation(
            "add needs an entry payload".into(),
        )),
        (Verb::Remove, CommandPayload::Entry(_)) => Err(ControlError::Validation(
            "remove needs an entry_id".into(),
        )),
    }
}

/// Replaces the match part of an installed ephemeral filter in place.
pub fn update_filter_match<T: ControlTarget + ?Sized>(
    target: &mut T,
    entry_id: EntryId,
    new_match: MatchSpec,
) -> Result<String, ControlError> {
    if new_match.is_empty() {
        return Err(ControlError::Validation("match has no fields".into()));
    }
    for name in target.router_names() {
        let router = target.router_mut(&name)?;
        let Some(idx) = router.ephemeral.entries.iter().position(|e| e.entry_id == entry_id) else {
            continue;
        };
        let EntryPayload::Filter(rule) = &router.ephemeral.entries[idx].payload else {
            return Err(ControlError::Validation(format!("entry {entry_id} is not a filter")));
        };
        let mut updated = rule.clone();
        updated.matches = new_match;
        for i in updated.interfaces() {
            if !router.state.has_interface(i) {
                return Err(ControlError::Validation(format!("{name} has no interface `{i}`")));
            }
        }
        router.ephemeral.entries[idx].payload = EntryPayload::Filter(updated);
        compile_fib(router);
        let entry = router.ephemeral.entries[idx].clone();
        target.record_inject(&name, InjectOp::Update, &entry);
        return Ok(name);
    }
    Err(ControlError::UnknownEntry(entry_id))
}

/// Per-node outcome of a fan-out batch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NodeOutcome {
    pub applied: Vec<EntryId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ControlError>,
}

/// Pushes a batch from a (compromised) controller. All-or-nothing per node;
/// a failing node does not stop the others.
pub fn controller_fanout<T: ControlTarget + ?Sized>(
    target: &mut T,
    commands: &[FlowModCommand],
) -> BTreeMap<String, NodeOutcome> {
    let mut by_node: BTreeMap<&str, Vec<&FlowModCommand>> = BTreeMap::new();
    for c in commands {
        by_node.entry(c.target.as_str()).or_default().push(c);
    }

    let mut results = BTreeMap::new();
    for (node, cmds) in by_node {
        let outcome = match dry_run(target, node, &cmds) {
            Err(e) => NodeOutcome {
                applied: Vec::new(),
                error: Some(e),
            },
            Ok(()) => {
                let mut applied = Vec::new();
                let mut error = None;
                for c in cmds {
                    match connector_apply(target, c) {
                        Ok(id) => applied.push(id),
                        Err(e) => {
                            error = Some(e);
                            break;
                        }
                    }
                }
                NodeOutcome { applied, error }
            }
        };
        results.insert(node.to_string(), outcome);
    }
    results
}

/// Applies the node's commands to a scratch copy of the router.
fn dry_run<T: ControlTarget + ?Sized>(
    target: &mut T,
    node: &str,
    cmds: &[&FlowModCommand],
) -> Result<(), ControlError> {
    let mut scratch = target.router_mut(node)?.clone();
    enabled(&scratch)?;
    for (i, c) in cmds.iter().enumerate() {
        match (&c.verb, &c.payload) {
            (Verb::Add, CommandPayload::Entry(p)) => {
                validate_payload(&scratch, p)?;
                install(&mut scratch, p.clone(), EntryId(u64::MAX - i as u64), 0);
            }
            (Verb::Remove, CommandPayload::Handle { entry_id }) => {
                scratch
                    .ephemeral
                    .remove(*entry_id)
                    .ok_or(ControlError::UnknownEntry(*entry_id))?;
            }
            _ => return Err(ControlError::Validation("verb and payload disagree".into())),
        }
    }
    Ok(())
}

/// Handles one wire line and returns the response line (without newline).
pub fn handle_wire_line<T: ControlTarget + ?Sized>(target: &mut T, line: &str) -> String {
    let response = match serde_json::from_str::<FlowModCommand>(line) {
        Err(e) => json!({"error": "parse", "detail": e.to_string()}),
        Ok(cmd) => match connector_apply(target, &cmd) {
            Ok(id) => json!({ "ok": id }),
            Err(e) => json!({"error": e.code(), "detail": e.to_string()}),
        },
    };
    response.to_string()
}

/// Serves one session: a command per input line, a response per output line.
/// Blank lines are skipped.
pub fn serve_session<T, R, W>(target: &mut T, reader: R, mut writer: W) -> std::io::Result<usize>
where
    T: ControlTarget + ?Sized,
    R: BufRead,
    W: Write,
{
    let mut handled = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(writer, "{}", handle_wire_line(target, &line))?;
        writer.flush()?;
        handled += 1;
    }
    Ok(handled)
}
