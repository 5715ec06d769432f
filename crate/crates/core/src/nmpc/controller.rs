//! Receding-horizon loop for one agent: reference construction, neighbour handling, warm start
//! and degraded-mode fallback around [`solve_ocp_with`].

use alloc::string::String;
use alloc::vec::Vec;

use crate::dynamics::{RigidBodyModel, RigidBodyState, Wrench};
use crate::math::{round, Vec3};
use crate::msgs::convert::StampedTrajectory;
use crate::sim::{waypoint_reference, WaypointPlan};

use super::reference::{align_trajectory, build_follower_refs, is_stale, FormationOffset};
use super::sqp::solve_ocp_with;
use super::{InputBounds, NmpcError, Obstacle, OcpProblem, OcpSolution, OcpWeights, SolveStatus, SolverSettings};

/// Broadcasts older than this many control periods are treated as stale.
pub const STALE_PERIODS: i64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum AgentRole {
    Leader { plan: WaypointPlan },
    Follower { leader_id: String, offset: FormationOffset },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    /// Control period and shooting interval, seconds.
    pub dt: f64,
    pub weights: OcpWeights,
    pub input_bounds: InputBounds,
    pub velocity_max: Option<Vec3>,
    pub d_min: f64,
    pub settings: SolverSettings,
    pub model: RigidBodyModel,
}

impl MpcConfig {
    /// Horizon 30 at 0.2 s, default weights, ±3 N / ±0.51 N·m, 0.4 m separation.
    pub fn formation_default(model: RigidBodyModel) -> Self {
        Self {
            horizon: 30,
            dt: 0.2,
            weights: OcpWeights::formation_default(),
            input_bounds: InputBounds::symmetric(3.0, 0.51),
            velocity_max: None,
            d_min: 0.4,
            settings: SolverSettings::default(),
            model,
        }
    }

    pub fn dt_ns(&self) -> i64 {
        round(self.dt * 1e9) as i64
    }
}

/// Snapshot handed to one control step.
#[derive(Debug, Clone, Copy)]
pub struct MpcInput<'a> {
    pub t_ns: i64,
    pub state: RigidBodyState,
    /// Latest broadcast of every other agent (the leader included, for followers).
    pub neighbors: &'a [StampedTrajectory],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcOutput {
    pub wrench: Wrench,
    pub solution: OcpSolution,
    pub broadcast: StampedTrajectory,
    pub refs: Vec<RigidBodyState>,
    /// Solver reported infeasible and the shifted previous plan was used instead.
    pub degraded: bool,
    /// Follower had no usable leader broadcast and held its current position.
    pub leader_missing: bool,
    pub stale_neighbors: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct MpcController {
    id: String,
    role: AgentRole,
    config: MpcConfig,
    previous: Option<OcpSolution>,
}

fn shifted(sol: &OcpSolution, tail: Wrench) -> Vec<Wrench> {
    let mut u: Vec<Wrench> = sol.u_seq.iter().skip(1).copied().collect();
    u.push(tail);
    u
}

impl MpcController {
    pub fn new(id: impl Into<String>, role: AgentRole, config: MpcConfig) -> Result<Self, NmpcError> {
        if config.horizon == 0 || !(config.dt > 0.0) {
            return Err(NmpcError::Invalid("horizon and dt must be positive"));
        }
        if !(config.d_min >= 0.0) {
            return Err(NmpcError::Invalid("d_min must be non-negative"));
        }
        config.weights.validate()?;
        Ok(Self {
            id: id.into(),
            role,
            config,
            previous: None,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn role(&self) -> &AgentRole {
        &self.role
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    pub fn reset(&mut self) {
        self.previous = None;
    }

    fn references(&self, input: &MpcInput<'_>) -> Result<(Vec<RigidBodyState>, bool), NmpcError> {
        let n = self.config.horizon;
        let t0 = input.t_ns as f64 * 1e-9;
        match &self.role {
            AgentRole::Leader { plan } => Ok((
                (0..=n)
                    .map(|k| waypoint_reference(plan, t0 + k as f64 * self.config.dt))
                    .collect(),
                false,
            )),
            AgentRole::Follower { leader_id, offset } => {
                let leader = input
                    .neighbors
                    .iter()
                    .find(|t| &t.agent_id == leader_id)
                    .and_then(|t| align_trajectory(t, input.t_ns, self.config.dt_ns(), n + 1));
                match leader {
                    Some(pred) => Ok((build_follower_refs(&pred, offset, n)?, false)),
                    None => {
                        let hold = RigidBodyState {
                            p_h: input.state.p_h,
                            q_hb: input.state.q_hb,
                            ..Default::default()
                        };
                        Ok((alloc::vec![hold; n + 1], true))
                    }
                }
            }
        }
    }

    /// One control step: solve, apply the first input, and prepare the broadcast.
    pub fn step(&mut self, input: &MpcInput<'_>) -> Result<MpcOutput, NmpcError> {
        let n = self.config.horizon;
        let dt_ns = self.config.dt_ns();
        let (refs, leader_missing) = self.references(input)?;

        let mut obstacles = Vec::new();
        let mut stale_neighbors = Vec::new();
        for nb in input.neighbors.iter().filter(|t| t.agent_id != self.id) {
            if let Some(pred) = align_trajectory(nb, input.t_ns, dt_ns, n + 1) {
                if is_stale(nb, input.t_ns, dt_ns, STALE_PERIODS) {
                    stale_neighbors.push(nb.agent_id.clone());
                }
                obstacles.push(Obstacle {
                    agent_id: nb.agent_id.clone(),
                    positions: pred.iter().map(|s| s.p_h).collect(),
                    d_min: self.config.d_min,
                });
            }
        }

        let problem = OcpProblem {
            x0: input.state,
            refs: refs.clone(),
            weights: self.config.weights,
            horizon: n,
            dt: self.config.dt,
            model: self.config.model,
            input_bounds: self.config.input_bounds,
            velocity_max: self.config.velocity_max,
            obstacles,
        };

        let warm = self.previous.as_ref().map(|p| OcpSolution {
            u_seq: shifted(p, *p.u_seq.last().unwrap_or(&Wrench::zero())),
            ..p.clone()
        });
        let mut solution = solve_ocp_with(&problem, warm.as_ref(), &self.config.settings)?;
        let mut degraded = false;
        if solution.status == SolveStatus::Infeasible {
            if let Some(prev) = &self.previous {
                degraded = true;
                let u_seq = shifted(prev, Wrench::zero());
                solution.x_pred = problem.rollout(&u_seq);
                solution.u_seq = u_seq;
            }
        }

        let broadcast = StampedTrajectory {
            agent_id: self.id.clone(),
            stamp_ns: input.t_ns,
            states: solution
                .x_pred
                .iter()
                .enumerate()
                .map(|(k, s)| (input.t_ns + k as i64 * dt_ns, *s))
                .collect(),
        };
        self.previous = Some(solution.clone());
        Ok(MpcOutput {
            wrench: solution.u_seq[0],
            solution,
            broadcast,
            refs,
            degraded,
            leader_missing,
            stale_neighbors,
        })
    }
}
