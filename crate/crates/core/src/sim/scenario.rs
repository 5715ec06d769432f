//! Multi-agent formation scenario: configuration, the plant side of the loop, and an
//! in-process lockstep runner.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::dynamics::{BodyParams, DynamicsError, OrbitParams, OrbitalElements, RigidBodyModel, RigidBodyState, Wrench};
use crate::math::{quat_from_axis_angle, round, Mat3, Vec3};
use crate::msgs::convert::StampedTrajectory;
use crate::nmpc::{
    AgentRole, FormationOffset, InputBounds, MpcConfig, MpcController, MpcInput, MpcOutput, NmpcError, OcpWeights,
    SolveStatus, SolverSettings,
};

use super::{
    allocate, plant_step, pwm_quantize, Allocation, PwmSchedule, ThrusterLayout, Waypoint, WaypointPlan, MIN_ON_TIME,
    NOMINAL_THRUST, PLANT_DT, PWM_WINDOW,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Nmpc(#[from] NmpcError),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutKind {
    Symmetric12,
    Planar8,
}

impl LayoutKind {
    pub fn build(self) -> ThrusterLayout {
        match self {
            LayoutKind::Symmetric12 => ThrusterLayout::symmetric12(),
            LayoutKind::Planar8 => ThrusterLayout::planar8(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    /// Namespace and agent id.
    pub ns: String,
    pub role: AgentRole,
    pub initial: RigidBodyState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub orbit: OrbitalElements,
    pub body: BodyParams,
    pub layout: LayoutKind,
    pub agents: Vec<AgentSpec>,
    /// Controller period, seconds (5 Hz by default).
    pub control_period: f64,
    pub pwm_window: f64,
    pub min_on_time: f64,
    pub nominal_thrust: f64,
    pub plant_dt: f64,
    pub horizon: usize,
    pub weights: OcpWeights,
    pub input_bounds: InputBounds,
    pub velocity_max: Option<Vec3>,
    pub d_min: f64,
    pub solver: SolverSettings,
    /// Simulated duration, seconds.
    pub duration: f64,
    /// Sim-time over wall-time; only meaningful when paced against a wall clock.
    pub speed: f64,
}

/// Cyclic leader waypoints used by the default formation scenario.
pub fn default_waypoints() -> WaypointPlan {
    let deg = core::f64::consts::PI / 180.0;
    let wp = |x: f64, y: f64, yaw: f64| Waypoint {
        position: Vec3::new(x, y, 0.0),
        attitude: quat_from_axis_angle(&Vec3::z(), yaw * deg),
    };
    WaypointPlan::new(
        alloc::vec![wp(0.0, 0.0, 0.0), wp(0.5, 0.0, 45.0), wp(0.5, 0.5, 0.0), wp(0.0, 0.5, -45.0)],
        20.0,
        true,
    )
    .expect("default plan is valid")
}

impl ScenarioConfig {
    /// Leader plus two followers at (−1.0, ±0.3, 0) m in near-circular LEO.
    pub fn formation_default() -> Self {
        let deg = core::f64::consts::PI / 180.0;
        let follower = |ns: &str, y: f64| AgentSpec {
            ns: ns.into(),
            role: AgentRole::Follower {
                leader_id: "leader".into(),
                offset: FormationOffset::translation(Vec3::new(-1.0, y, 0.0)),
            },
            initial: RigidBodyState::at_position(Vec3::new(-1.0, y, 0.0)),
        };
        Self {
            orbit: OrbitalElements {
                a: 6_778_000.0,
                e: 0.001,
                i: 45.0 * deg,
                raan: 270.0 * deg,
                arg_periapsis: 90.0 * deg,
                true_anomaly: 0.0,
            },
            body: BodyParams::new(17.8, Mat3::identity() * 0.315).expect("valid body"),
            layout: LayoutKind::Symmetric12,
            agents: alloc::vec![
                AgentSpec {
                    ns: "leader".into(),
                    role: AgentRole::Leader {
                        plan: default_waypoints()
                    },
                    initial: RigidBodyState::default(),
                },
                follower("follower1", 0.3),
                follower("follower2", -0.3),
            ],
            control_period: 0.2,
            pwm_window: PWM_WINDOW,
            min_on_time: MIN_ON_TIME,
            nominal_thrust: NOMINAL_THRUST,
            plant_dt: PLANT_DT,
            horizon: 30,
            weights: OcpWeights::formation_default(),
            input_bounds: InputBounds::symmetric(3.0, 0.51),
            velocity_max: None,
            d_min: 0.4,
            solver: SolverSettings::default(),
            duration: 120.0,
            speed: 1.0,
        }
    }

    pub fn model(&self) -> Result<RigidBodyModel, ScenarioError> {
        Ok(RigidBodyModel::new(OrbitParams::earth(self.orbit.a)?, self.body))
    }

    pub fn mpc_config(&self) -> Result<MpcConfig, ScenarioError> {
        Ok(MpcConfig {
            horizon: self.horizon,
            dt: self.control_period,
            weights: self.weights,
            input_bounds: self.input_bounds,
            velocity_max: self.velocity_max,
            d_min: self.d_min,
            settings: self.solver,
            model: self.model()?,
        })
    }

    pub fn control_period_ns(&self) -> i64 {
        round(self.control_period * 1e9) as i64
    }

    /// Number of control periods in the run.
    pub fn steps(&self) -> usize {
        round(self.duration / self.control_period) as usize
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let positive = [
            ("control_period", self.control_period),
            ("pwm_window", self.pwm_window),
            ("plant_dt", self.plant_dt),
            ("nominal_thrust", self.nominal_thrust),
            ("duration", self.duration),
            ("speed", self.speed),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(invalid(alloc::format!("{name} must be positive")));
            }
        }
        if !(self.min_on_time >= 0.0 && self.min_on_time < self.pwm_window) {
            return Err(invalid("min_on_time must lie in [0, pwm_window)"));
        }
        let ratio = self.control_period / self.pwm_window;
        if (ratio - round(ratio)).abs() > 1e-9 || round(ratio) < 1.0 {
            return Err(invalid("control_period must be a whole number of PWM windows"));
        }
        if self.plant_dt > self.pwm_window {
            return Err(invalid("plant_dt must not exceed the PWM window"));
        }
        if self.agents.is_empty() {
            return Err(invalid("at least one agent is required"));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.ns.is_empty() || a.ns.contains('/') {
                return Err(invalid(alloc::format!("agent namespace '{}' is not a single path segment", a.ns)));
            }
            if self.agents[..i].iter().any(|b| b.ns == a.ns) {
                return Err(invalid(alloc::format!("duplicate namespace '{}'", a.ns)));
            }
            if let AgentRole::Follower { leader_id, .. } = &a.role {
                if !self.agents.iter().any(|b| &b.ns == leader_id && matches!(b.role, AgentRole::Leader { .. })) {
                    return Err(invalid(alloc::format!("agent '{}' follows unknown leader '{leader_id}'", a.ns)));
                }
            }
        }
        self.model()?;
        self.mpc_config()?.weights.validate()?;
        Ok(())
    }

    pub fn controllers(&self) -> Result<Vec<MpcController>, ScenarioError> {
        let cfg = self.mpc_config()?;
        self.agents
            .iter()
            .map(|a| MpcController::new(a.ns.clone(), a.role.clone(), cfg.clone()).map_err(Into::into))
            .collect()
    }
}

/// Plant state of every agent plus the actuation currently applied.
#[derive(Debug, Clone)]
pub struct Plant {
    layout: ThrusterLayout,
    model: RigidBodyModel,
    pwm_window: f64,
    min_on_time: f64,
    nominal_thrust: f64,
    plant_dt: f64,
    states: Vec<RigidBodyState>,
    schedules: Vec<PwmSchedule>,
    t_ns: i64,
}

impl Plant {
    pub fn new(config: &ScenarioConfig) -> Result<Self, ScenarioError> {
        let layout = config.layout.build();
        let off = PwmSchedule::off(layout.len(), config.pwm_window, config.nominal_thrust);
        Ok(Self {
            model: config.model()?,
            pwm_window: config.pwm_window,
            min_on_time: config.min_on_time,
            nominal_thrust: config.nominal_thrust,
            plant_dt: config.plant_dt,
            states: config.agents.iter().map(|a| a.initial).collect(),
            schedules: alloc::vec![off; config.agents.len()],
            layout,
            t_ns: 0,
        })
    }

    pub fn t_ns(&self) -> i64 {
        self.t_ns
    }

    pub fn states(&self) -> &[RigidBodyState] {
        &self.states
    }

    pub fn layout(&self) -> &ThrusterLayout {
        &self.layout
    }

    /// Allocates a body wrench for agent `i`; the resulting schedule repeats every window
    /// until the next command.
    pub fn apply_command(&mut self, i: usize, cmd: &Wrench) -> (Allocation, &PwmSchedule) {
        let alloc = allocate(cmd, &self.layout);
        self.schedules[i] = pwm_quantize(&alloc.thrust, self.pwm_window, self.min_on_time, self.nominal_thrust);
        (alloc, &self.schedules[i])
    }

    /// Advances every agent by `dt` seconds in plant steps, calling `on_tick` with the sim
    /// time after each one.
    pub fn advance(&mut self, dt: f64, mut on_tick: impl FnMut(i64, &[RigidBodyState])) {
        let window_ns = round(self.pwm_window * 1e9) as i64;
        let step_ns = round(self.plant_dt * 1e9) as i64;
        let end = self.t_ns + round(dt * 1e9) as i64;
        while self.t_ns < end {
            let into = self.t_ns.rem_euclid(window_ns);
            let next = (self.t_ns + step_ns).min(end).min(self.t_ns - into + window_ns);
            let (t0, h) = (into as f64 * 1e-9, (next - self.t_ns) as f64 * 1e-9);
            for (x, s) in self.states.iter_mut().zip(&self.schedules) {
                *x = plant_step(x, s, &self.layout, &self.model, t0, h, self.plant_dt);
            }
            self.t_ns = next;
            on_tick(self.t_ns, &self.states);
        }
    }
}

/// One agent's record for one control period.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub t_ns: i64,
    pub ns: String,
    pub state: RigidBodyState,
    pub reference: RigidBodyState,
    pub cmd: Wrench,
    pub achieved_wrench: Wrench,
    pub thr_on_times: Vec<f64>,
    pub iterations: usize,
    pub status: SolveStatus,
    pub degraded: bool,
}

impl RunRecord {
    pub fn new(t_ns: i64, ns: &str, state: RigidBodyState, out: &MpcOutput, alloc: &Allocation, sched: &PwmSchedule) -> Self {
        Self {
            t_ns,
            ns: ns.into(),
            state,
            reference: out.refs[0],
            cmd: out.wrench,
            achieved_wrench: alloc.achieved,
            thr_on_times: sched.on_times.clone(),
            iterations: out.solution.iterations,
            status: out.solution.status,
            degraded: out.degraded,
        }
    }
}

/// Runs the scenario in-process. At control step `k` every agent sees its own state at `t_k`
/// and the other agents' broadcasts from step `k − 1`, so the outcome does not depend on
/// the order in which agents are solved.
/// `on_tick` sees every plant step.
pub fn run_lockstep(
    config: &ScenarioConfig,
    mut on_record: impl FnMut(&RunRecord),
    mut on_tick: impl FnMut(i64, &[RigidBodyState]),
) -> Result<(), ScenarioError> {
    config.validate()?;
    let mut plant = Plant::new(config)?;
    let mut controllers = config.controllers()?;
    let mut broadcasts: Vec<StampedTrajectory> = Vec::new();

    for _ in 0..config.steps() {
        let t_ns = plant.t_ns();
        let states = plant.states().to_vec();
        let mut outputs = Vec::with_capacity(controllers.len());
        for (c, state) in controllers.iter_mut().zip(&states) {
            outputs.push(c.step(&MpcInput {
                t_ns,
                state: *state,
                neighbors: &broadcasts,
            })?);
        }
        for (i, out) in outputs.iter().enumerate() {
            let (alloc, sched) = plant.apply_command(i, &out.wrench);
            on_record(&RunRecord::new(t_ns, &config.agents[i].ns, states[i], out, &alloc, sched));
        }
        broadcasts = outputs.into_iter().map(|o| o.broadcast).collect();
        plant.advance(config.control_period, &mut on_tick);
    }
    Ok(())
}

/// Formation error of every follower record: distance from the leader's logged position plus
/// the follower's offset, at the same stamp.
pub fn formation_errors(config: &ScenarioConfig, records: &[RunRecord]) -> Vec<(String, i64, f64)> {
    let mut out = Vec::new();
    for a in &config.agents {
        let AgentRole::Follower { leader_id, offset } = &a.role else {
            continue;
        };
        for r in records.iter().filter(|r| r.ns == a.ns) {
            if let Some(l) = records.iter().find(|l| &l.ns == leader_id && l.t_ns == r.t_ns) {
                out.push((a.ns.clone(), r.t_ns, (r.state.p_h - l.state.p_h - offset.dp).norm()));
            }
        }
    }
    out
}

/// Smallest distance between any two of the given agents.
pub fn min_separation(states: &[RigidBodyState]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in states.iter().enumerate() {
        for b in &states[i + 1..] {
            best = best.min((a.p_h - b.p_h).norm());
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::quat_identity;

    #[test]
    fn default_config_is_valid() {
        let cfg = ScenarioConfig::formation_default();
        cfg.validate().unwrap();
        assert_eq!(cfg.steps(), 600);
        assert_eq!(cfg.control_period_ns(), 200_000_000);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = ScenarioConfig::formation_default();
        cfg.agents[2].ns = "follower1".into();
        assert!(matches!(cfg.validate(), Err(ScenarioError::Invalid(m)) if m.contains("duplicate")));

        let mut cfg = ScenarioConfig::formation_default();
        cfg.control_period = 0.15;
        assert!(cfg.validate().is_err());

        let mut cfg = ScenarioConfig::formation_default();
        cfg.agents.remove(0);
        assert!(matches!(cfg.validate(), Err(ScenarioError::Invalid(m)) if m.contains("unknown leader")));

        let mut cfg = ScenarioConfig::formation_default();
        cfg.plant_dt = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn plant_ticks_are_monotone_and_complete() {
        let cfg = ScenarioConfig::formation_default();
        let mut plant = Plant::new(&cfg).unwrap();
        let mut ticks = Vec::new();
        plant.advance(0.2, |t, _| ticks.push(t));
        plant.advance(0.2, |t, _| ticks.push(t));
        let expect: Vec<i64> = (1..=20).map(|k| k * 20_000_000).collect();
        assert_eq!(ticks, expect);
    }

    #[test]
    fn lockstep_result_is_independent_of_agent_order() {
        let mut cfg = ScenarioConfig::formation_default();
        cfg.duration = 2.0;
        cfg.agents[0].role = AgentRole::Leader {
            plan: WaypointPlan::hold(Vec3::new(0.3, 0.0, 0.0), quat_identity()).unwrap(),
        };
        let mut a = Vec::new();
        run_lockstep(&cfg, |r| a.push(r.clone()), |_, _| {}).unwrap();
        cfg.agents.reverse();
        let mut b = Vec::new();
        run_lockstep(&cfg, |r| b.push(r.clone()), |_, _| {}).unwrap();
        for r in &a {
            let twin = b.iter().find(|x| x.ns == r.ns && x.t_ns == r.t_ns).unwrap();
            assert_eq!(r, twin);
        }
        assert_eq!(a.len(), 3 * 10);
    }
}
