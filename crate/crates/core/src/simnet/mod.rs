//! Deterministic discrete-event network: topology loading, the event
//! engine, host applications and the event trace.

mod apps;
mod engine;
mod topology;
mod trace;

pub use apps::{
    aid_process, echo_reply, flow_ip_id, AidHost, AidOutput, CaptureRecord, FlowProto, FlowSpec, HostApp,
    Mutator, PayloadSpec, ReturnMode,
};
pub use engine::{run, ControlAction, Simulation};
pub use topology::{
    build, load_topology, Endpoint, HostNode, IfAddr, InterfaceDoc, LinkDoc, LinkEnd, Node, NodeDoc,
    NodeKind, SwitchNode, Topology, TopologyDoc, TopologyError,
};
pub use trace::{Event, EventKind, EventTrace};
