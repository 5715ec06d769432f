//! Communication stress harness: paced `SCStates` publishers, one per spacecraft, into a
//! single aggregating subscriber.

use std::fmt;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use formation_core::dynamics::RigidBodyState;
use formation_core::math::Vec3;
use formation_core::msgs::convert::sc_states;
use formation_core::msgs::SchemaRegistry;
use log::{debug, info};
use serde::Serialize;
use thiserror::Error;

use crate::bridge::{
    BridgeClient, BridgeConfig, BridgeError, BridgeServer, Direction, EndpointRole, TopicRegistration,
};

/// Shortest run that still gives stable rate statistics.
pub const MIN_DURATION: Duration = Duration::from_secs(10);

/// Achieved rates below this fraction of the target flag the row as CPU-bound.
pub const CPU_BOUND_FRACTION: f64 = 0.95;

const DRAIN_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Payload {
    ScStates,
}

impl Payload {
    pub fn schema(self) -> &'static str {
        match self {
            Payload::ScStates => "SCStates",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StressConfig {
    /// Simulation speed multiplier; scales message stamps, not the wall-clock publish rate.
    pub speed: f64,
    pub spacecraft: usize,
    /// Per-topic publish rate, Hz.
    pub target_hz: f64,
    pub duration: Duration,
    pub payload: Payload,
}

impl StressConfig {
    pub fn new(speed: f64, spacecraft: usize, target_hz: f64, duration: Duration) -> Self {
        Self {
            speed,
            spacecraft,
            target_hz,
            duration,
            payload: Payload::ScStates,
        }
    }

    pub fn validate(&self) -> Result<(), StressError> {
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(StressError::Invalid(format!("speed must be positive, got {}", self.speed)));
        }
        if self.spacecraft == 0 {
            return Err(StressError::Invalid("spacecraft count must be positive".into()));
        }
        if !(self.target_hz > 0.0 && self.target_hz.is_finite()) {
            return Err(StressError::Invalid(format!("target rate must be positive, got {}", self.target_hz)));
        }
        if self.duration < MIN_DURATION {
            return Err(StressError::Invalid(format!(
                "duration must be at least {} s, got {:.3} s",
                MIN_DURATION.as_secs(),
                self.duration.as_secs_f64()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum StressError {
    #[error("invalid stress configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentRate {
    pub topic: String,
    pub sent: u64,
    pub received: u64,
    /// Hub-side and subscriber-side drops together.
    pub dropped: u64,
    pub achieved_hz: f64,
    pub std_ms: f64,
}

/// One report row: the configuration followed by what was measured.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StressReport {
    pub speed: f64,
    pub spacecraft: usize,
    pub target_hz: f64,
    /// Mean over spacecraft.
    pub achieved_hz: f64,
    /// Mean over spacecraft of the receive inter-arrival standard deviation.
    pub std_ms: f64,
    pub drops: u64,
    pub cpu_bound: bool,
    pub sent: u64,
    pub received: u64,
    pub agents: Vec<AgentRate>,
}

impl StressReport {
    pub const COLUMNS: [&'static str; 7] =
        ["Sim speed", "S/c", "Target [Hz]", "Achieved [Hz]", "Std [ms]", "Drops", "CPU-bound"];

    pub fn min_achieved_hz(&self) -> f64 {
        self.agents.iter().map(|a| a.achieved_hz).fold(f64::INFINITY, f64::min)
    }

    /// Every sent message was either received or counted as dropped.
    pub fn ledger_balanced(&self) -> bool {
        self.agents.iter().all(|a| a.sent == a.received + a.dropped)
    }
}

impl fmt::Display for StressReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:>9} {:>5} {:>11} {:>13.1} {:>8.2} {:>7} {:>9}",
            format!("{}x", self.speed),
            self.spacecraft,
            self.target_hz,
            self.achieved_hz,
            self.std_ms,
            self.drops,
            if self.cpu_bound { "yes" } else { "no" }
        )
    }
}

pub fn header_line() -> String {
    let c = StressReport::COLUMNS;
    format!(
        "{:>9} {:>5} {:>11} {:>13} {:>8} {:>7} {:>9}",
        c[0], c[1], c[2], c[3], c[4], c[5], c[6]
    )
}

fn interarrival(times: &[Instant]) -> (f64, f64) {
    if times.len() < 2 {
        return (0.0, 0.0);
    }
    let span = times[times.len() - 1].duration_since(times[0]).as_secs_f64();
    let rate = (times.len() - 1) as f64 / span;
    let gaps: Vec<f64> = times.windows(2).map(|w| w[1].duration_since(w[0]).as_secs_f64() * 1e3).collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let var = gaps.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / gaps.len() as f64;
    (rate, var.sqrt())
}

fn spacecraft_ns(i: usize) -> String {
    format!("sc{i}")
}

/// Runs one configuration against a private bridge on ephemeral ports.
pub fn run_stress(config: &StressConfig) -> Result<StressReport, StressError> {
    run_stress_on(config, &BridgeConfig::ephemeral())
}

pub fn run_stress_on(config: &StressConfig, bridge: &BridgeConfig) -> Result<StressReport, StressError> {
    config.validate()?;
    let registry = SchemaRegistry::builtin();
    let server = BridgeServer::start(bridge.clone(), registry.clone())?;
    let bridge = server.config().clone();
    let publisher = Arc::new(BridgeClient::connect(&bridge, "stress-pub", EndpointRole::Simulator, registry.clone())?);
    let subscriber = BridgeClient::connect(&bridge, "stress-sub", EndpointRole::Monitor, registry)?;

    let schema = config.payload.schema();
    let mut arrivals = Vec::new();
    let mut handles = Vec::new();
    for i in 0..config.spacecraft {
        let reg = TopicRegistration::new(&spacecraft_ns(i), Direction::Out, "sc_states", schema);
        handles.push(publisher.register_publisher(reg.clone())?);
        let times: Arc<Mutex<Vec<Instant>>> = Arc::new(Mutex::new(Vec::new()));
        let sink = times.clone();
        subscriber.subscribe(reg, move |_| sink.lock().unwrap().push(Instant::now()))?;
        arrivals.push(times);
    }

    let period = Duration::from_secs_f64(1.0 / config.target_hz);
    let start = Instant::now() + Duration::from_millis(20);
    let end = start + config.duration;
    let workers: Vec<_> = handles
        .into_iter()
        .enumerate()
        .map(|(i, handle)| {
            let client = publisher.clone();
            let speed = config.speed;
            thread::spawn(move || -> Result<u64, BridgeError> {
                let mut state = RigidBodyState::at_position(Vec3::new(i as f64, 0.0, 0.0));
                let mut sent = 0u64;
                let mut next = start;
                while next < end {
                    let now = Instant::now();
                    if next > now {
                        thread::sleep(next - now);
                    }
                    let stamp = (next.duration_since(start).as_secs_f64() * speed * 1e9).round() as i64;
                    state.p_h.y = sent as f64 * 1e-6;
                    client.publish(&handle, &sc_states(&state, stamp), stamp)?;
                    sent += 1;
                    // Absolute deadlines: a late publish does not push back the ones after it.
                    next += period;
                }
                Ok(sent)
            })
        })
        .collect();
    let mut sent_by_worker = Vec::new();
    for w in workers {
        sent_by_worker.push(w.join().expect("stress publisher panicked")?);
    }

    let paths: Vec<String> = (0..config.spacecraft)
        .map(|i| TopicRegistration::new(&spacecraft_ns(i), Direction::Out, "sc_states", schema).path())
        .collect();
    let accounted = |paths: &[String]| {
        let hub = server.stats();
        paths.iter().all(|p| {
            let sent = publisher.topic_stats(p).sent;
            let sub = subscriber.topic_stats(p);
            let hub_drops = hub.get(p).map_or(0, |s| s.dropped());
            sub.received + sub.dropped() + hub_drops >= sent
        })
    };
    let drain_deadline = Instant::now() + DRAIN_TIMEOUT;
    while !accounted(&paths) && Instant::now() < drain_deadline {
        thread::sleep(Duration::from_millis(10));
    }
    subscriber.close();
    publisher.close();

    let hub = server.stats();
    let mut agents = Vec::new();
    for (i, path) in paths.iter().enumerate() {
        let sent = publisher.topic_stats(path).sent;
        debug_assert_eq!(sent, sent_by_worker[i]);
        let sub = subscriber.topic_stats(path);
        let hub_drops = hub.get(path).map_or(0, |s| s.dropped());
        let times = arrivals[i].lock().unwrap();
        let (achieved_hz, std_ms) = interarrival(&times);
        agents.push(AgentRate {
            topic: path.clone(),
            sent,
            received: sub.received,
            dropped: sub.dropped() + hub_drops,
            achieved_hz,
            std_ms,
        });
    }
    let n = agents.len() as f64;
    let achieved_hz = agents.iter().map(|a| a.achieved_hz).sum::<f64>() / n;
    let report = StressReport {
        speed: config.speed,
        spacecraft: config.spacecraft,
        target_hz: config.target_hz,
        achieved_hz,
        std_ms: agents.iter().map(|a| a.std_ms).sum::<f64>() / n,
        drops: agents.iter().map(|a| a.dropped).sum(),
        cpu_bound: achieved_hz < CPU_BOUND_FRACTION * config.target_hz,
        sent: agents.iter().map(|a| a.sent).sum(),
        received: agents.iter().map(|a| a.received).sum(),
        agents,
    };
    info!("stress row: {report}");
    if !report.ledger_balanced() {
        debug!("unbalanced stress ledger: {:?}", report.agents);
    }
    Ok(report)
}
