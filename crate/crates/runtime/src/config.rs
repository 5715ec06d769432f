//! TOML scenario files. Every key is optional; omitted values fall back to the default
//! three-agent formation scenario and the default bridge settings.

use std::fs;
use std::path::Path;
use std::time::Duration;

use formation_core::dynamics::{BodyParams, RigidBodyState};
use formation_core::math::{quat_from_axis_angle, quat_from_wxyz, Mat3, Quat, Vec3};
use formation_core::msgs::DecodeMode;
use formation_core::nmpc::{AgentRole, FormationOffset, OcpWeights, StateWeights};
use formation_core::sim::{AgentSpec, LayoutKind, ScenarioConfig, ScenarioError, Waypoint, WaypointPlan};
use nalgebra::{Matrix6, Vector4, Vector6};
use serde::Deserialize;
use thiserror::Error;

use crate::bridge::{BridgeConfig, BridgeError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Syntax { path: String, source: Box<toml::de::Error> },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// A parsed scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub bridge: BridgeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::formation_default(),
            bridge: BridgeConfig::default(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    orbit: Option<OrbitSection>,
    body: Option<BodySection>,
    actuation: Option<ActuationSection>,
    control: Option<ControlSection>,
    run: Option<RunSection>,
    bridge: Option<BridgeSection>,
    agents: Option<Vec<AgentSection>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OrbitSection {
    a_km: Option<f64>,
    e: Option<f64>,
    i_deg: Option<f64>,
    raan_deg: Option<f64>,
    arg_periapsis_deg: Option<f64>,
    true_anomaly_deg: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Inertia {
    Diagonal([f64; 3]),
    Full([[f64; 3]; 3]),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BodySection {
    mass: Option<f64>,
    inertia: Option<Inertia>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PerAxis {
    Scalar(f64),
    Vector([f64; 3]),
}

impl PerAxis {
    fn vec(&self) -> Vec3 {
        match *self {
            PerAxis::Scalar(v) => Vec3::repeat(v),
            PerAxis::Vector(v) => Vec3::from(v),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActuationSection {
    layout: Option<String>,
    pwm_window: Option<f64>,
    min_on_time: Option<f64>,
    nominal_thrust: Option<f64>,
    force_max: Option<PerAxis>,
    torque_max: Option<PerAxis>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsSection {
    position: Option<f64>,
    velocity: Option<f64>,
    attitude: Option<f64>,
    rate: Option<f64>,
    force: Option<f64>,
    torque: Option<f64>,
    terminal_scale: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverSection {
    max_iter: Option<usize>,
    kkt_tol: Option<f64>,
    penalty_init: Option<f64>,
    penalty_cap: Option<f64>,
    violation_tol: Option<f64>,
    infeasible_tol: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlSection {
    period: Option<f64>,
    horizon: Option<usize>,
    d_min: Option<f64>,
    velocity_max: Option<PerAxis>,
    weights: Option<WeightsSection>,
    solver: Option<SolverSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    duration: Option<f64>,
    speed: Option<f64>,
    plant_dt: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BridgeSection {
    host: Option<String>,
    rx_port: Option<u16>,
    tx_port: Option<u16>,
    heartbeat_port: Option<u16>,
    heartbeat_period_ms: Option<u64>,
    liveness_timeout_ms: Option<u64>,
    queue_depth: Option<usize>,
    decode: Option<String>,
    connect_timeout_ms: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseSection {
    position: [f64; 3],
    yaw_deg: Option<f64>,
    /// Scalar-first attitude; overrides `yaw_deg`.
    q: Option<[f64; 4]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentSection {
    ns: String,
    role: String,
    initial: Option<PoseSection>,
    // leader
    dwell: Option<f64>,
    cyclic: Option<bool>,
    waypoints: Option<Vec<PoseSection>>,
    // follower
    leader: Option<String>,
    offset: Option<[f64; 3]>,
    offset_yaw_deg: Option<f64>,
}

fn attitude(yaw_deg: Option<f64>, q: Option<[f64; 4]>) -> Quat {
    match q {
        Some(q) => quat_from_wxyz(&Vector4::from(q)),
        None => quat_from_axis_angle(&Vec3::z(), yaw_deg.unwrap_or(0.0).to_radians()),
    }
}

fn set<T>(target: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *target = v;
    }
}

fn agent(a: AgentSection) -> Result<AgentSpec, ConfigError> {
    let initial = a
        .initial
        .as_ref()
        .map(|p| RigidBodyState {
            p_h: Vec3::from(p.position),
            q_hb: attitude(p.yaw_deg, p.q),
            ..Default::default()
        });
    let role = match a.role.as_str() {
        "leader" => {
            if a.leader.is_some() || a.offset.is_some() || a.offset_yaw_deg.is_some() {
                return Err(invalid(format!("leader '{}' must not set leader or offset", a.ns)));
            }
            let waypoints: Vec<Waypoint> = match a.waypoints {
                Some(w) => w
                    .iter()
                    .map(|p| Waypoint {
                        position: Vec3::from(p.position),
                        attitude: attitude(p.yaw_deg, p.q),
                    })
                    .collect(),
                None => {
                    let hold = initial.unwrap_or_default();
                    vec![Waypoint {
                        position: hold.p_h,
                        attitude: hold.q_hb,
                    }]
                }
            };
            let plan = WaypointPlan::new(waypoints, a.dwell.unwrap_or(20.0), a.cyclic.unwrap_or(true))
                .map_err(|e| invalid(format!("agent '{}': {e}", a.ns)))?;
            AgentRole::Leader { plan }
        }
        "follower" => {
            if a.waypoints.is_some() || a.dwell.is_some() || a.cyclic.is_some() {
                return Err(invalid(format!("follower '{}' must not set waypoints", a.ns)));
            }
            let leader_id = a
                .leader
                .ok_or_else(|| invalid(format!("follower '{}' needs a leader", a.ns)))?;
            let dp = Vec3::from(
                a.offset
                    .ok_or_else(|| invalid(format!("follower '{}' needs an offset", a.ns)))?,
            );
            let dq = attitude(a.offset_yaw_deg, None);
            let offset = FormationOffset::new(dp, dq).map_err(|e| invalid(format!("agent '{}': {e}", a.ns)))?;
            AgentRole::Follower { leader_id, offset }
        }
        other => return Err(invalid(format!("agent '{}': unknown role '{other}'", a.ns))),
    };
    let initial = initial.unwrap_or_else(|| match &role {
        AgentRole::Leader { plan } => RigidBodyState {
            p_h: plan.waypoints()[0].position,
            q_hb: plan.waypoints()[0].attitude,
            ..Default::default()
        },
        AgentRole::Follower { offset, .. } => RigidBodyState::at_position(offset.dp),
    });
    Ok(AgentSpec {
        ns: a.ns,
        role,
        initial,
    })
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::parse(text, "<inline>")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        let file: FileConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax {
            path: path.to_string(),
            source: Box::new(e),
        })?;
        let mut cfg = RunConfig::default();
        let s = &mut cfg.scenario;

        if let Some(o) = file.orbit {
            set(&mut s.orbit.a, o.a_km.map(|v| v * 1e3));
            set(&mut s.orbit.e, o.e);
            set(&mut s.orbit.i, o.i_deg.map(f64::to_radians));
            set(&mut s.orbit.raan, o.raan_deg.map(f64::to_radians));
            set(&mut s.orbit.arg_periapsis, o.arg_periapsis_deg.map(f64::to_radians));
            set(&mut s.orbit.true_anomaly, o.true_anomaly_deg.map(f64::to_radians));
        }
        if let Some(b) = file.body {
            let mass = b.mass.unwrap_or(s.body.mass);
            let inertia = match b.inertia {
                None => s.body.inertia,
                Some(Inertia::Diagonal(d)) => Mat3::from_diagonal(&Vec3::from(d)),
                Some(Inertia::Full(m)) => Mat3::from_fn(|r, c| m[r][c]),
            };
            s.body = BodyParams::new(mass, inertia).map_err(ScenarioError::from)?;
        }
        if let Some(a) = file.actuation {
            if let Some(l) = a.layout {
                s.layout = match l.as_str() {
                    "symmetric12" => LayoutKind::Symmetric12,
                    "planar8" => LayoutKind::Planar8,
                    other => return Err(invalid(format!("unknown thruster layout '{other}'"))),
                };
            }
            set(&mut s.pwm_window, a.pwm_window);
            set(&mut s.min_on_time, a.min_on_time);
            set(&mut s.nominal_thrust, a.nominal_thrust);
            set(&mut s.input_bounds.force_max, a.force_max.map(|v| v.vec()));
            set(&mut s.input_bounds.torque_max, a.torque_max.map(|v| v.vec()));
        }
        if let Some(c) = file.control {
            set(&mut s.control_period, c.period);
            set(&mut s.horizon, c.horizon);
            set(&mut s.d_min, c.d_min);
            if let Some(v) = c.velocity_max {
                s.velocity_max = Some(v.vec());
            }
            if let Some(w) = c.weights {
                let d = &s.weights.stage;
                let scale = w.terminal_scale.unwrap_or_else(|| {
                    let base = d.p[(0, 0)];
                    if base > 0.0 { s.weights.terminal.p[(0, 0)] / base } else { 20.0 }
                });
                let stage = StateWeights::diagonal(
                    w.position.unwrap_or(d.p[(0, 0)]),
                    w.velocity.unwrap_or(d.v[(0, 0)]),
                    w.attitude.unwrap_or(d.q),
                    w.rate.unwrap_or(d.w[(0, 0)]),
                );
                let (f, t) = (
                    w.force.unwrap_or(s.weights.r[(0, 0)]),
                    w.torque.unwrap_or(s.weights.r[(3, 3)]),
                );
                let r = Matrix6::from_diagonal(&Vector6::new(f, f, f, t, t, t));
                s.weights = OcpWeights::new(stage, r, scale);
            }
            if let Some(v) = c.solver {
                set(&mut s.solver.max_iter, v.max_iter);
                set(&mut s.solver.kkt_tol, v.kkt_tol);
                set(&mut s.solver.penalty_init, v.penalty_init);
                set(&mut s.solver.penalty_cap, v.penalty_cap);
                set(&mut s.solver.violation_tol, v.violation_tol);
                set(&mut s.solver.infeasible_tol, v.infeasible_tol);
            }
        }
        if let Some(r) = file.run {
            set(&mut s.duration, r.duration);
            set(&mut s.speed, r.speed);
            set(&mut s.plant_dt, r.plant_dt);
        }
        if let Some(agents) = file.agents {
            s.agents = agents.into_iter().map(agent).collect::<Result<_, _>>()?;
        }

        let b = &mut cfg.bridge;
        if let Some(br) = file.bridge {
            set(&mut b.host, br.host);
            set(&mut b.rx_port, br.rx_port);
            set(&mut b.tx_port, br.tx_port);
            set(&mut b.heartbeat_port, br.heartbeat_port);
            set(&mut b.heartbeat_period, br.heartbeat_period_ms.map(Duration::from_millis));
            set(&mut b.liveness_timeout, br.liveness_timeout_ms.map(Duration::from_millis));
            set(&mut b.queue_depth, br.queue_depth);
            set(&mut b.connect_timeout, br.connect_timeout_ms.map(Duration::from_millis));
            if let Some(d) = br.decode {
                b.decode_mode = match d.as_str() {
                    "strict" => DecodeMode::Strict,
                    "lenient" => DecodeMode::Lenient,
                    other => return Err(invalid(format!("unknown decode mode '{other}'"))),
                };
            }
        }
        cfg.scenario.validate()?;
        cfg.bridge.validate()?;
        Ok(cfg)
    }
}

/// Three-agent scenario as shipped in `scenarios/formation3.toml`.
pub const FORMATION3: &str = include_str!("../../../scenarios/formation3.toml");
/// Two agents swapping sides, as shipped in `scenarios/crossing.toml`.
pub const CROSSING: &str = include_str!("../../../scenarios/crossing.toml");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default_scenario() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn shipped_formation_matches_defaults() {
        let cfg = RunConfig::from_toml(FORMATION3).unwrap();
        let d = RunConfig::default();
        assert_eq!(cfg.bridge, d.bridge);
        let (a, b) = (&cfg.scenario, &d.scenario);
        assert_eq!(a.agents.len(), 3);
        assert_eq!(a.agents[1], b.agents[1]);
        assert_eq!(a.agents[2], b.agents[2]);
        assert_eq!(a.layout, b.layout);
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.input_bounds, b.input_bounds);
        assert_eq!((a.control_period, a.horizon, a.d_min, a.duration), (b.control_period, b.horizon, b.d_min, b.duration));
        assert!((a.orbit.i - b.orbit.i).abs() < 1e-15 && a.orbit.a == b.orbit.a);
        let (AgentRole::Leader { plan: pa }, AgentRole::Leader { plan: pb }) = (&a.agents[0].role, &b.agents[0].role)
        else {
            panic!("first agent must lead");
        };
        assert_eq!(pa.dwell(), pb.dwell());
        for (x, y) in pa.waypoints().iter().zip(pb.waypoints()) {
            assert!((x.position - y.position).norm() < 1e-15);
            assert!((x.attitude.coords - y.attitude.coords).norm() < 1e-12);
        }
    }

    #[test]
    fn crossing_file_parses() {
        let cfg = RunConfig::from_toml(CROSSING).unwrap();
        assert_eq!(cfg.scenario.agents.len(), 2);
        assert!(cfg.scenario.agents.iter().all(|a| matches!(a.role, AgentRole::Leader { .. })));
    }

    #[test]
    fn overrides_and_errors() {
        let cfg = RunConfig::from_toml(
            "[control]\nperiod = 0.4\n[control.weights]\nposition = 2.0\n[bridge]\nrx_port = 6000\nheartbeat_period_ms = 50\n[actuation]\nforce_max = [1.0, 2.0, 3.0]\n",
        )
        .unwrap();
        assert_eq!(cfg.scenario.control_period, 0.4);
        assert_eq!(cfg.scenario.weights.stage.p[(0, 0)], 2.0);
        assert_eq!(cfg.scenario.weights.terminal.p[(0, 0)], 40.0);
        assert_eq!(cfg.bridge.rx_port, 6000);
        assert_eq!(cfg.bridge.heartbeat_period, Duration::from_millis(50));
        assert_eq!(cfg.scenario.input_bounds.force_max, Vec3::new(1.0, 2.0, 3.0));

        let err = RunConfig::from_toml("[run]\nduraton = 3\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { .. }), "{err}");
        let err = RunConfig::from_toml("[run]\nduration = \"long\"").unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
        assert!(RunConfig::from_toml("[bridge]\ntx_port = 5550").is_err());
        assert!(RunConfig::from_toml("[run]\nduration = -1.0").is_err());
        assert!(RunConfig::from_toml("[[agents]]\nns = \"a\"\nrole = \"pilot\"").is_err());
        assert!(RunConfig::from_toml("[[agents]]\nns = \"f\"\nrole = \"follower\"\nleader = \"x\"\noffset = [0,0,0]").is_err());
        assert!(RunConfig::from_toml("[actuation]\nlayout = \"hex6\"").is_err());
    }
}
