use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use lab_core::control::{connector_apply, serve_session, AuditReport, FlowModCommand};
use lab_core::scenarios::{
    detect_divergence, detect_latency_shift, dominant_flow, fixtures, fleet_audit, stage, traceroute,
    DivergenceReport, FlowKey, LatencyReport, ProbeProto, ReturnKind, Scenario, StageOptions, TracePath, Verdict,
    DEFAULT_HORIZON_US, DEFAULT_MAX_TTL,
};
use lab_core::simnet::{load_topology, EventKind, EventTrace, Simulation, Topology};
use lab_core::IpAddress;
use serde::Serialize;

const EXIT_ANOMALY: u8 = 2;

#[derive(Parser)]
#[command(name = "lab", version, about = "Transit-node hijacking lab: simulate, stage, trace, audit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReturnModeArg {
    Direct,
    Hairpin,
}

impl From<ReturnModeArg> for ReturnKind {
    fn from(m: ReturnModeArg) -> Self {
        match m {
            ReturnModeArg::Direct => ReturnKind::Direct,
            ReturnModeArg::Hairpin => ReturnKind::Hairpin,
        }
    }
}

#[derive(clap::Args)]
struct Staging {
    /// Topology file, or a bundled name: fig4, fig6, fig6_hairpin.
    #[arg(long)]
    topology: String,
    #[arg(long, default_value = "baseline")]
    scenario: Scenario,
    /// Overrides the redirect plan's return mode.
    #[arg(long, value_enum)]
    return_mode: Option<ReturnModeArg>,
    /// Aid host forwards without decrementing TTL.
    #[arg(long)]
    stealth_aid: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Staging {
    fn simulation(&self) -> Result<Simulation> {
        let mut sim = Simulation::new(read_topology(&self.topology)?, self.seed)?;
        let opts = StageOptions {
            return_mode: self.return_mode.map(Into::into),
            stealth_aid: self.stealth_aid,
        };
        stage(&mut sim, self.scenario, &opts).with_context(|| format!("staging {}", self.scenario))?;
        Ok(sim)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the event trace as NDJSON.
    Run {
        #[command(flatten)]
        staging: Staging,
        #[arg(long, default_value_t = DEFAULT_HORIZON_US)]
        horizon_us: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Traceroute from a host, optionally with a scenario staged.
    Trace {
        #[command(flatten)]
        staging: Staging,
        /// `icmp` or `tcp:PORT`.
        #[arg(long)]
        proto: ProbeProto,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: IpAddress,
        #[arg(long, default_value_t = DEFAULT_MAX_TTL)]
        max_ttl: u8,
        /// Write the path here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit every node after staging a scenario or replaying a command file.
    Audit {
        #[arg(long)]
        topology: String,
        /// Scenario name, or an NDJSON file of connector commands.
        #[arg(long)]
        state: String,
    },
    /// Compare two traces (and optionally two traceroutes).
    Report {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        suspect: PathBuf,
        /// Flow to compare, `src>dst/proto[:port]`. Defaults to the busiest
        /// flow in the baseline.
        #[arg(long)]
        flow: Option<FlowKey>,
        #[arg(long, default_value_t = 1.5)]
        threshold: f64,
        /// ICMP path from `lab trace`.
        #[arg(long, requires = "tcp")]
        icmp: Option<PathBuf>,
        /// TCP path from `lab trace`.
        #[arg(long, requires = "icmp")]
        tcp: Option<PathBuf>,
    },
    /// Serve the connector wire protocol against a topology's routers:
    /// one JSON command per line in, one response per line out.
    Connector {
        #[arg(long)]
        topology: String,
        /// Listen on this address; sessions are served one at a time.
        /// Without it, a single session runs over stdin/stdout.
        #[arg(long)]
        listen: Option<String>,
    },
}

fn read_topology(arg: &str) -> Result<Topology> {
    let text = match fixtures::document(arg) {
        Some(doc) if !Path::new(arg).exists() => doc.to_string(),
        _ => std::fs::read_to_string(arg).with_context(|| format!("reading {arg}"))?,
    };
    load_topology(&text).with_context(|| format!("loading {arg}"))
}

fn read_trace(path: &Path) -> Result<EventTrace> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    EventTrace::read_ndjson(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn read_path(path: &Path) -> Result<TracePath> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn run(staging: &Staging, horizon: u64, out: &Path) -> Result<u8> {
    let mut sim = staging.simulation()?;
    sim.run(horizon);
    let trace = sim.trace();
    let mut w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    trace.write_ndjson(&mut w)?;
    w.flush()?;

    let (mut emitted, mut delivered, mut dropped, mut captured) = (0, 0, 0, 0);
    for e in trace.iter() {
        match e.kind {
            EventKind::PacketEmit { .. } => emitted += 1,
            EventKind::AppDeliver { .. } => delivered += 1,
            EventKind::Drop { .. } => dropped += 1,
            EventKind::Capture { .. } => captured += 1,
            _ => {}
        }
    }
    eprintln!(
        "{}: {} events, {emitted} emits, {delivered} deliveries, {dropped} drops, {captured} captures -> {}",
        staging.scenario,
        trace.events.len(),
        out.display()
    );
    if trace.horizon_reached() {
        eprintln!("warning: horizon reached with events pending");
    }
    Ok(0)
}

fn trace_cmd(staging: &Staging, proto: ProbeProto, from: &str, to: IpAddress, max_ttl: u8, out: Option<&Path>) -> Result<u8> {
    let mut sim = staging.simulation()?;
    let path = traceroute(&mut sim, from, to, proto, max_ttl)?;
    eprintln!("traceroute to {to} ({proto}), {max_ttl} hops max");
    for h in &path.hops {
        let rtt = h.rtt_us.map_or("*".to_string(), |r| format!("{:.3} ms", r as f64 / 1000.0));
        eprintln!("{:>3}  {:<16} {rtt}", h.ttl, h.responder.to_string());
    }
    if let (Some(ttl), Some(rtt)) = (path.reached_at, path.reached_rtt_us) {
        eprintln!("{ttl:>3}  {:<16} {:.3} ms", to.to_string(), rtt as f64 / 1000.0);
    }
    match out {
        Some(p) => std::fs::write(p, serde_json::to_string_pretty(&path)? + "\n")
            .with_context(|| format!("writing {}", p.display()))?,
        None => print_json(&path)?,
    }
    Ok(0)
}

fn audit_table(reports: &[AuditReport]) {
    eprintln!("{:<8} {:>9}  classes", "node", "anomalies");
    for r in reports {
        let classes: Vec<String> = r.summary.iter().map(|(c, n)| format!("{c:?}={n}")).collect();
        eprintln!("{:<8} {:>9}  {}", r.node, r.anomalies.len(), classes.join(" "));
    }
}

fn audit(topology: &str, state: &str) -> Result<u8> {
    let mut sim = Simulation::new(read_topology(topology)?, 0)?;
    if let Ok(scenario) = state.parse::<Scenario>() {
        stage(&mut sim, scenario, &StageOptions::default()).with_context(|| format!("staging {scenario}"))?;
    } else {
        let f = File::open(state).with_context(|| format!("`{state}` is neither a scenario nor a readable file"))?;
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cmd: FlowModCommand =
                serde_json::from_str(&line).with_context(|| format!("{state}:{}: bad command", n + 1))?;
            connector_apply(&mut sim, &cmd).with_context(|| format!("{state}:{}", n + 1))?;
        }
    }
    let reports = fleet_audit(sim.topology());
    audit_table(&reports);
    print_json(&reports)?;
    Ok(if reports.iter().all(|r| r.is_clean()) { 0 } else { EXIT_ANOMALY })
}

#[derive(Serialize)]
struct Report {
    latency: LatencyReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    divergence: Option<DivergenceReport>,
}

fn report(
    baseline: &Path,
    suspect: &Path,
    flow: Option<FlowKey>,
    threshold: f64,
    paths: Option<(&Path, &Path)>,
) -> Result<u8> {
    let b = read_trace(baseline)?;
    let s = read_trace(suspect)?;
    let flow = match flow {
        Some(f) => f,
        None => dominant_flow(&b).context("baseline trace has no deliveries")?,
    };
    let latency = detect_latency_shift(&b, &s, &flow, threshold)?;
    let divergence = match paths {
        Some((icmp, tcp)) => Some(detect_divergence(&read_path(icmp)?, &read_path(tcp)?)?),
        None => None,
    };

    eprintln!("flow {}", latency.flow);
    eprintln!("  baseline  {:>5} pkts  mean {:>10.1} us", latency.baseline_packets, latency.baseline_mean_us);
    eprintln!("  suspect   {:>5} pkts  mean {:>10.1} us", latency.suspect_packets, latency.suspect_mean_us);
    eprintln!(
        "  delta {:+.1} us  threshold x{}  {}",
        latency.delta_us,
        latency.threshold_factor,
        if latency.flagged { "FLAGGED" } else { "ok" }
    );
    if let Some(d) = &divergence {
        let icmp = d.icmp.responders();
        let tcp = d.tcp.responders();
        eprintln!("{:>3}  {:<16} {:<16}", "ttl", "icmp", "tcp");
        for i in 0..icmp.len().max(tcp.len()) {
            let cell = |v: &[lab_core::scenarios::Responder]| v.get(i).map_or("-".into(), |r| r.to_string());
            let mark = if Some(i as u8 + 1) == d.first_divergent_ttl { "  <-" } else { "" };
            eprintln!("{:>3}  {:<16} {:<16}{mark}", i + 1, cell(&icmp), cell(&tcp));
        }
        eprintln!("verdict: {:?}", d.verdict);
    }

    let anomalous = latency.flagged || divergence.as_ref().is_some_and(|d| d.verdict == Verdict::Divergent);
    print_json(&Report { latency, divergence })?;
    Ok(if anomalous { EXIT_ANOMALY } else { 0 })
}

fn connector(topology: &str, listen: Option<&str>) -> Result<u8> {
    let mut sim = Simulation::new(read_topology(topology)?, 0)?;
    match listen {
        None => {
            let n = serve_session(&mut sim, io::stdin().lock(), io::stdout().lock())?;
            eprintln!("{n} commands handled");
        }
        Some(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            eprintln!("listening on {}", listener.local_addr()?);
            for conn in listener.incoming() {
                let conn = conn?;
                let peer = conn.peer_addr()?;
                let n = serve_session(&mut sim, BufReader::new(conn.try_clone()?), conn)?;
                eprintln!("{peer}: {n} commands handled");
            }
        }
    }
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run { staging, horizon_us, out } => run(&staging, horizon_us, &out),
        Command::Trace {
            staging,
            proto,
            from,
            to,
            max_ttl,
            out,
        } => trace_cmd(&staging, proto, &from, to, max_ttl, out.as_deref()),
        Command::Audit { topology, state } => audit(&topology, &state),
        Command::Report {
            baseline,
            suspect,
            flow,
            threshold,
            icmp,
            tcp,
        } => {
            if threshold <= 0.0 || threshold.is_nan() {
                bail!("threshold must be positive");
            }
            report(&baseline, &suspect, flow, threshold, icmp.as_deref().zip(tcp.as_deref()))
        }
        Command::Connector { topology, listen } => connector(&topology, listen.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // keep 2 for "anomalies found"
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
