//! The formation scenario run over the bridge: a simulator endpoint owning the plant and
//! one controller endpoint per agent.
//!
//! Every control step the simulator publishes `sc_states` stamped `t_k`, then waits for each
//! agent's `cmd_force`, `cmd_torque` and `controller_status` carrying the same stamp before it
//! advances the plant, publishing `/clock` on every plant tick. Before solving step `k` an
//! agent waits for the other agents' predicted trajectories from step `k − 1`, which makes a
//! bridged run reproduce the in-process lockstep runner.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::process::Child;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use formation_core::dynamics::{RigidBodyState, Wrench};
use formation_core::math::Vec3;
use formation_core::msgs::convert::{
    cmd_force, cmd_force_from, cmd_torque, cmd_torque_from, controller_status, controller_status_from,
    predicted_trajectory, predicted_trajectory_from, sc_states, sc_states_from, ControllerReport, StampedTrajectory,
};
use formation_core::msgs::SchemaRegistry;
use formation_core::nmpc::MpcInput;
use formation_core::sim::{min_separation, Plant, ScenarioConfig, ScenarioError};
use log::{debug, info, warn};
use serde::Serialize;
use thiserror::Error;

use crate::bridge::{
    BridgeClient, BridgeConfig, BridgeError, BridgeServer, Direction, EndpointRole, LinkState, TopicRegistration,
};
use crate::runlog::{status_str, LogError, LogHeader, LogRecord, LogWriter};

pub const SC_STATES: &str = "sc_states";
pub const CMD_FORCE: &str = "cmd_force";
pub const CMD_TORQUE: &str = "cmd_torque";
pub const PREDICTED_TRAJECTORY: &str = "predicted_trajectory";
pub const CONTROLLER_STATUS: &str = "controller_status";

pub const SIM_ENDPOINT: &str = "sim";

const PREDICTION_HISTORY: usize = 4;

/// Stamp of the `controller_status` an agent repeats until its first state arrives.
pub const READY_STAMP: i64 = -1;
const READY_REPEAT: Duration = Duration::from_millis(50);

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("timed out after {timeout:?} waiting for {what}")]
    Timeout { what: String, timeout: Duration },
    #[error("bridge connection lost")]
    BridgeLost,
    #[error("agent '{0}' is not part of the scenario")]
    UnknownAgent(String),
    #[error("agent '{ns}' failed: {message}")]
    Agent { ns: String, message: String },
    #[error("{0}")]
    Process(String),
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// NDJSON run log; skipped when `None`.
    pub log_path: Option<PathBuf>,
    /// Longest wait for any single step's messages.
    pub step_timeout: Duration,
    /// How long a Lost bridge link is tolerated before the run aborts.
    pub lost_grace: Duration,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            log_path: None,
            step_timeout: Duration::from_secs(30),
            lost_grace: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentSummary {
    pub ns: String,
    pub steps: usize,
    /// Follower formation error over the whole run, m; `None` for leaders.
    pub max_formation_error: Option<f64>,
    pub rms_formation_error: Option<f64>,
    pub degraded_steps: usize,
    pub max_iterations: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub steps: usize,
    pub sim_time_s: f64,
    pub wall_time_s: f64,
    pub min_separation_m: f64,
    pub agents: Vec<AgentSummary>,
}

/// Latest value per key plus a condition variable to wait on.
struct Mailbox<T> {
    slots: Mutex<HashMap<String, T>>,
    changed: Condvar,
}

impl<T: Clone> Mailbox<T> {
    fn new() -> Arc<Self> {
        Arc::new(Self {
            slots: Mutex::new(HashMap::new()),
            changed: Condvar::new(),
        })
    }

    fn put(&self, key: &str, value: T) {
        self.update(key, |slot| *slot = Some(value));
    }

    fn update(&self, key: &str, f: impl FnOnce(&mut Option<T>)) {
        let mut slots = self.slots.lock().unwrap();
        let mut slot = slots.remove(key);
        f(&mut slot);
        if let Some(v) = slot {
            slots.insert(key.to_string(), v);
        }
        drop(slots);
        self.changed.notify_all();
    }

    fn snapshot(&self) -> HashMap<String, T> {
        self.slots.lock().unwrap().clone()
    }

    /// Waits until `ready` holds, checking `link` between wake-ups.
    fn wait(
        &self,
        what: &str,
        timeout: Duration,
        link: &LinkWatch<'_>,
        mut ready: impl FnMut(&HashMap<String, T>) -> bool,
    ) -> Result<(), RunError> {
        let deadline = Instant::now() + timeout;
        let mut slots = self.slots.lock().unwrap();
        while !ready(&slots) {
            let now = Instant::now();
            if now >= deadline {
                return Err(RunError::Timeout {
                    what: what.to_string(),
                    timeout,
                });
            }
            link.check()?;
            let slice = (deadline - now).min(Duration::from_millis(50));
            slots = self.changed.wait_timeout(slots, slice).unwrap().0;
        }
        Ok(())
    }
}

struct LinkWatch<'a> {
    client: &'a BridgeClient,
    grace: Duration,
    lost_since: std::cell::Cell<Option<Instant>>,
}

impl<'a> LinkWatch<'a> {
    fn new(client: &'a BridgeClient, grace: Duration) -> Self {
        Self {
            client,
            grace,
            lost_since: std::cell::Cell::new(None),
        }
    }

    fn check(&self) -> Result<(), RunError> {
        if self.client.connection_state().state != LinkState::Lost {
            self.lost_since.set(None);
            return Ok(());
        }
        let since = self.lost_since.get().unwrap_or_else(Instant::now);
        self.lost_since.set(Some(since));
        if since.elapsed() > self.grace {
            return Err(RunError::BridgeLost);
        }
        Ok(())
    }
}

fn topic(ns: &str, dir: Direction, name: &str, schema: &str) -> TopicRegistration {
    TopicRegistration::new(ns, dir, name, schema)
}

fn registry() -> SchemaRegistry {
    SchemaRegistry::builtin()
}

/// Waits until the hub's heartbeats arrive, so the link watcher starts from Connected.
fn await_link(client: &BridgeClient, timeout: Duration) -> Result<(), RunError> {
    let deadline = Instant::now() + timeout;
    while client.connection_state().state == LinkState::Lost {
        if Instant::now() >= deadline {
            return Err(RunError::BridgeLost);
        }
        thread::sleep(Duration::from_millis(5));
    }
    Ok(())
}

/// Runs one agent's controller until the scenario's last control step.
pub fn run_agent(config: &ScenarioConfig, ns: &str, bridge: &BridgeConfig, opts: &RunOptions) -> Result<(), RunError> {
    config.validate()?;
    let index = config
        .agents
        .iter()
        .position(|a| a.ns == ns)
        .ok_or_else(|| RunError::UnknownAgent(ns.to_string()))?;
    let mut controller = config.controllers()?.swap_remove(index);
    let client = BridgeClient::connect(bridge, ns, EndpointRole::Controller, registry())?;
    await_link(&client, bridge.connect_timeout)?;
    let link = LinkWatch::new(&client, opts.lost_grace);

    let states: Arc<Mailbox<(i64, RigidBodyState)>> = Mailbox::new();
    let inbox = states.clone();
    let own = ns.to_string();
    client.subscribe(topic(ns, Direction::Out, SC_STATES, "SCStates"), move |d| {
        match sc_states_from(&d.value) {
            Ok((s, stamp)) => inbox.put(&own, (stamp, s)),
            Err(e) => warn!("bad sc_states: {e}"),
        }
    })?;
    let others: Vec<String> = config.agents.iter().filter(|a| a.ns != ns).map(|a| a.ns.clone()).collect();
    // A few recent predictions per neighbour: a fast neighbour may already have published
    // step k while this agent still needs its step k − 1 broadcast.
    let predictions: Arc<Mailbox<BTreeMap<i64, StampedTrajectory>>> = Mailbox::new();
    for other in &others {
        let inbox = predictions.clone();
        let key = other.clone();
        client.subscribe(
            topic(other, Direction::In, PREDICTED_TRAJECTORY, "PredictedTrajectory"),
            move |d| match predicted_trajectory_from(&d.value) {
                Ok(t) => inbox.update(&key, |slot| {
                    let recent = slot.get_or_insert_with(BTreeMap::new);
                    recent.insert(t.stamp_ns, t);
                    while recent.len() > PREDICTION_HISTORY {
                        recent.pop_first();
                    }
                }),
                Err(e) => warn!("bad prediction from {key}: {e}"),
            },
        )?;
    }
    let pub_force = client.register_publisher(topic(ns, Direction::In, CMD_FORCE, "CmdForce"))?;
    let pub_torque = client.register_publisher(topic(ns, Direction::In, CMD_TORQUE, "CmdTorque"))?;
    let pub_pred = client.register_publisher(topic(ns, Direction::In, PREDICTED_TRAJECTORY, "PredictedTrajectory"))?;
    let pub_status = client.register_publisher(topic(ns, Direction::In, CONTROLLER_STATUS, "ControllerStatus"))?;

    // Every subscription above is acknowledged, so announce readiness until the simulator starts.
    let ready = ControllerReport {
        stamp_ns: READY_STAMP,
        reference: config.agents[index].initial,
        iterations: 0,
        status: "waiting".into(),
        degraded: false,
        cost: 0.0,
    };
    let waiting_since = Instant::now();
    loop {
        client.publish(&pub_status, &controller_status(&ready), READY_STAMP)?;
        let started = states.wait("first state", READY_REPEAT, &link, |m| m.contains_key(ns));
        match started {
            Ok(()) => break,
            Err(RunError::Timeout { .. }) if waiting_since.elapsed() < opts.step_timeout => {}
            Err(RunError::Timeout { .. }) => {
                return Err(RunError::Timeout {
                    what: format!("{ns} first state"),
                    timeout: opts.step_timeout,
                })
            }
            Err(e) => return Err(e),
        }
    }

    let period_ns = config.control_period_ns();
    for k in 0..config.steps() {
        let t_ns = k as i64 * period_ns;
        states.wait(&format!("{ns} state at t={t_ns} ns"), opts.step_timeout, &link, |m| {
            m.get(ns).is_some_and(|(s, _)| *s >= t_ns)
        })?;
        let (stamp, state) = states.snapshot()[ns];
        if stamp != t_ns {
            return Err(RunError::Agent {
                ns: ns.into(),
                message: format!("expected state stamped {t_ns}, got {stamp}"),
            });
        }
        if k > 0 {
            let prev = t_ns - period_ns;
            let waited = predictions.wait("neighbour predictions", opts.step_timeout, &link, |m| {
                others
                    .iter()
                    .all(|o| m.get(o).and_then(|r| r.keys().next_back()).is_some_and(|s| *s >= prev))
            });
            if let Err(RunError::Timeout { .. }) = waited {
                warn!("{ns}: proceeding at t={t_ns} ns without fresh neighbour predictions");
            } else {
                waited?;
            }
        }
        let neighbors: Vec<StampedTrajectory> = {
            let snap = predictions.snapshot();
            others
                .iter()
                .filter_map(|o| snap.get(o)?.range(..t_ns).next_back().map(|(_, t)| t.clone()))
                .collect()
        };
        let out = controller
            .step(&MpcInput {
                t_ns,
                state,
                neighbors: &neighbors,
            })
            .map_err(|e| RunError::Agent {
                ns: ns.into(),
                message: e.to_string(),
            })?;
        if out.leader_missing {
            debug!("{ns}: no leader prediction at t={t_ns} ns, holding position");
        }
        let report = ControllerReport {
            stamp_ns: t_ns,
            reference: out.refs[0],
            iterations: out.solution.iterations as i64,
            status: status_str(out.solution.status).into(),
            degraded: out.degraded,
            cost: if out.solution.cost.is_finite() { out.solution.cost } else { f64::MAX },
        };
        client.publish(&pub_pred, &predicted_trajectory(&out.broadcast), t_ns)?;
        client.publish(&pub_status, &controller_status(&report), t_ns)?;
        client.publish(&pub_force, &cmd_force(&out.wrench.force_b, t_ns), t_ns)?;
        client.publish(&pub_torque, &cmd_torque(&out.wrench.torque_b, t_ns), t_ns)?;
    }
    debug!("{ns}: finished {} steps", config.steps());
    Ok(())
}

#[derive(Clone)]
enum Inbound {
    Force(i64, Vec3),
    Torque(i64, Vec3),
    Status(ControllerReport),
}

/// Runs the plant side. Agents must be started separately (threads or processes).
pub fn run_simulator(config: &ScenarioConfig, bridge: &BridgeConfig, opts: &RunOptions) -> Result<RunSummary, RunError> {
    config.validate()?;
    let started = Instant::now();
    let client = BridgeClient::connect(bridge, SIM_ENDPOINT, EndpointRole::Simulator, registry())?;
    await_link(&client, bridge.connect_timeout)?;
    let link = LinkWatch::new(&client, opts.lost_grace);

    let inbox: Arc<Mailbox<Inbound>> = Mailbox::new();
    let mut state_pubs = Vec::new();
    for a in &config.agents {
        let ns = a.ns.clone();
        let subscriptions = [
            (CMD_FORCE, "CmdForce", "force"),
            (CMD_TORQUE, "CmdTorque", "torque"),
            (CONTROLLER_STATUS, "ControllerStatus", "status"),
        ];
        for (name, schema, kind) in subscriptions {
            let inbox = inbox.clone();
            let key = format!("{ns}/{kind}");
            client.subscribe(topic(&ns, Direction::In, name, schema), move |d| {
                let parsed = match kind {
                    "force" => cmd_force_from(&d.value).map(|(f, t)| Inbound::Force(t, f)),
                    "torque" => cmd_torque_from(&d.value).map(|(f, t)| Inbound::Torque(t, f)),
                    _ => controller_status_from(&d.value).map(Inbound::Status),
                };
                match parsed {
                    Ok(v) => inbox.put(&key, v),
                    Err(e) => warn!("bad {key}: {e}"),
                }
            })?;
        }
        state_pubs.push(client.register_publisher(topic(&ns, Direction::Out, SC_STATES, "SCStates"))?);
    }

    let mut log = match &opts.log_path {
        Some(p) => Some(LogWriter::create(p, &LogHeader::for_scenario(config))?),
        None => None,
    };
    inbox.wait("agents to become ready", opts.step_timeout, &link, |m| {
        config.agents.iter().all(|a| m.contains_key(&format!("{}/status", a.ns)))
    })?;
    let mut plant = Plant::new(config)?;
    let period_ns = config.control_period_ns();
    let n = config.agents.len();
    let mut records: Vec<LogRecord> = Vec::with_capacity(config.steps() * n);
    let mut min_sep = min_separation(plant.states());
    let wall0 = Instant::now();
    client.publish_clock(0)?;

    for k in 0..config.steps() {
        let t_ns = k as i64 * period_ns;
        debug_assert_eq!(t_ns, plant.t_ns());
        let states = plant.states().to_vec();
        for (p, s) in state_pubs.iter().zip(&states) {
            client.publish(p, &sc_states(s, t_ns), t_ns)?;
        }
        let stamp_of = |v: &Inbound| match v {
            Inbound::Force(t, _) | Inbound::Torque(t, _) => *t,
            Inbound::Status(r) => r.stamp_ns,
        };
        inbox.wait(&format!("commands for t={t_ns} ns"), opts.step_timeout, &link, |m| {
            config.agents.iter().all(|a| {
                ["force", "torque", "status"]
                    .iter()
                    .all(|kind| m.get(&format!("{}/{kind}", a.ns)).is_some_and(|v| stamp_of(v) == t_ns))
            })
        })?;
        let snap = inbox.snapshot();
        for (i, a) in config.agents.iter().enumerate() {
            let get = |kind: &str| snap[&format!("{}/{kind}", a.ns)].clone();
            let (Inbound::Force(_, f), Inbound::Torque(_, tq), Inbound::Status(report)) =
                (get("force"), get("torque"), get("status"))
            else {
                unreachable!("mailbox keys are typed by kind");
            };
            let cmd = Wrench::new(f, tq);
            let (alloc, sched) = plant.apply_command(i, &cmd);
            let rec = LogRecord {
                t_ns,
                ns: a.ns.clone(),
                state: states[i].to_vector().into(),
                reference: report.reference.to_vector().into(),
                cmd: cmd.to_vector().into(),
                achieved_wrench: alloc.achieved.to_vector().into(),
                thr_on_times: sched.on_times.clone(),
                iterations: report.iterations as usize,
                status: report.status.clone(),
                degraded: report.degraded,
            };
            if let Some(w) = log.as_mut() {
                w.write(&rec)?;
            }
            records.push(rec);
        }

        let mut clock_err = None;
        plant.advance(config.control_period, |t, s| {
            min_sep = min_sep.min(min_separation(s));
            // Pace sim time against the wall clock at the configured speed.
            let due = wall0 + Duration::from_secs_f64(t as f64 * 1e-9 / config.speed);
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
            if let Err(e) = client.publish_clock(t) {
                clock_err.get_or_insert(e);
            }
        });
        if let Some(e) = clock_err {
            return Err(e.into());
        }
    }
    if let Some(w) = log {
        w.finish()?;
    }
    let summary = summarize(config, &records, min_sep, started.elapsed());
    info!(
        "run finished: {} steps, {:.1} s sim in {:.1} s wall, min separation {:.3} m",
        summary.steps, summary.sim_time_s, summary.wall_time_s, summary.min_separation_m
    );
    Ok(summary)
}

pub fn summarize(config: &ScenarioConfig, records: &[LogRecord], min_sep: f64, wall: Duration) -> RunSummary {
    let log = crate::runlog::RunLog {
        header: LogHeader::for_scenario(config),
        records: records.to_vec(),
    };
    let errors = log.formation_errors();
    let agents = config
        .agents
        .iter()
        .map(|a| {
            let mine: Vec<f64> = errors.iter().filter(|e| e.0 == a.ns).map(|e| e.2).collect();
            let recs: Vec<&LogRecord> = records.iter().filter(|r| r.ns == a.ns).collect();
            AgentSummary {
                ns: a.ns.clone(),
                steps: recs.len(),
                max_formation_error: (!mine.is_empty()).then(|| mine.iter().cloned().fold(0.0, f64::max)),
                rms_formation_error: (!mine.is_empty())
                    .then(|| (mine.iter().map(|e| e * e).sum::<f64>() / mine.len() as f64).sqrt()),
                degraded_steps: recs.iter().filter(|r| r.degraded).count(),
                max_iterations: recs.iter().map(|r| r.iterations as i64).max().unwrap_or(0),
            }
        })
        .collect();
    RunSummary {
        steps: config.steps(),
        sim_time_s: config.steps() as f64 * config.control_period,
        wall_time_s: wall.as_secs_f64(),
        min_separation_m: min_sep,
        agents,
    }
}

/// Bridge, simulator and every agent in one process, each endpoint on its own thread.
pub fn run_in_process(config: &ScenarioConfig, bridge: &BridgeConfig, opts: &RunOptions) -> Result<RunSummary, RunError> {
    config.validate()?;
    let server = BridgeServer::start(bridge.clone(), registry())?;
    let bridge = server.config().clone();
    let agents: Vec<_> = config
        .agents
        .iter()
        .map(|a| {
            let (config, bridge, opts, ns) = (config.clone(), bridge.clone(), opts.clone(), a.ns.clone());
            thread::Builder::new()
                .name(format!("agent-{ns}"))
                .spawn(move || run_agent(&config, &ns, &bridge, &opts))
                .map_err(|e| RunError::Process(e.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let result = run_simulator(config, &bridge, opts);
    for (a, h) in config.agents.iter().zip(agents) {
        match h.join() {
            Ok(Ok(())) => {}
            Ok(Err(e)) if result.is_ok() => return Err(e),
            Ok(Err(e)) => debug!("{}: {e}", a.ns),
            Err(_) => {
                return Err(RunError::Agent {
                    ns: a.ns.clone(),
                    message: "thread panicked".into(),
                })
            }
        }
    }
    result
}

/// Hosts the bridge and the simulator here and runs each agent as a child process created
/// by `spawn(ns, bridge)`. Children are killed if the simulator fails.
pub fn run_supervised(
    config: &ScenarioConfig,
    bridge: &BridgeConfig,
    opts: &RunOptions,
    mut spawn: impl FnMut(&str, &BridgeConfig) -> std::io::Result<Child>,
) -> Result<RunSummary, RunError> {
    config.validate()?;
    let server = BridgeServer::start(bridge.clone(), registry())?;
    let bridge = server.config().clone();
    let mut children: Vec<(String, Child)> = Vec::new();
    for a in &config.agents {
        match spawn(&a.ns, &bridge) {
            Ok(c) => children.push((a.ns.clone(), c)),
            Err(e) => {
                kill_all(&mut children);
                return Err(RunError::Process(format!("cannot start agent '{}': {e}", a.ns)));
            }
        }
    }
    let result = run_simulator(config, &bridge, opts);
    if result.is_err() {
        kill_all(&mut children);
        return result;
    }
    let deadline = Instant::now() + opts.step_timeout;
    for (ns, child) in &mut children {
        let status = loop {
            match child.try_wait() {
                Ok(Some(s)) => break s,
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                Ok(None) => {
                    let _ = child.kill();
                    break child.wait().map_err(|e| RunError::Process(e.to_string()))?;
                }
                Err(e) => return Err(RunError::Process(e.to_string())),
            }
        };
        if !status.success() {
            return Err(RunError::Agent {
                ns: ns.clone(),
                message: format!("process exited with {status}"),
            });
        }
    }
    result
}

fn kill_all(children: &mut [(String, Child)]) {
    for (ns, c) in children {
        if let Err(e) = c.kill() {
            debug!("kill {ns}: {e}");
        }
        let _ = c.wait();
    }
}
