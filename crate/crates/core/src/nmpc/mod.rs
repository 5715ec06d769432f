//! Decentralized nonlinear MPC for leader–follower formation flight.
//!
//! Each agent solves its own optimal control problem over a horizon of `N` steps, applies the
//! first input, and broadcasts its predicted trajectory; neighbours' broadcasts enter as
//! pairwise separation constraints.

mod controller;
mod cost;
mod qp;
mod reference;
mod sqp;

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::Matrix6;
use thiserror::Error;

use crate::dynamics::{RigidBodyModel, RigidBodyState, Wrench};
use crate::math::{quat_norm, Mat3, Vec3};

pub use controller::{AgentRole, MpcConfig, MpcController, MpcInput, MpcOutput, STALE_PERIODS};
pub use cost::{collision_residuals, stage_cost, terminal_cost};
pub use qp::{solve_box_qp, BoxQpResult};
pub use reference::{align_trajectory, build_follower_refs, is_stale, FormationOffset};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NmpcError {
    #[error("reference length {found} does not match horizon + 1 = {expected}")]
    ReferenceLength { expected: usize, found: usize },
    #[error("obstacle '{agent}' has {found} positions, expected {expected}")]
    ObstacleLength {
        agent: String,
        expected: usize,
        found: usize,
    },
    #[error("quaternion at index {0} is not unit-norm")]
    NonUnitQuaternion(usize),
    #[error("invalid problem: {0}")]
    Invalid(&'static str),
}

/// Weights on state error. `q` is the scalar weight of the quaternion term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateWeights {
    pub p: Mat3,
    pub v: Mat3,
    pub q: f64,
    pub w: Mat3,
}

impl StateWeights {
    pub fn diagonal(p: f64, v: f64, q: f64, w: f64) -> Self {
        Self {
            p: Mat3::identity() * p,
            v: Mat3::identity() * v,
            q,
            w: Mat3::identity() * w,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            p: self.p * k,
            v: self.v * k,
            q: self.q * k,
            w: self.w * k,
        }
    }

    fn is_psd(&self) -> bool {
        psd3(&self.p) && psd3(&self.v) && psd3(&self.w) && self.q >= 0.0
    }
}

fn psd3(m: &Mat3) -> bool {
    (m - m.transpose()).amax() <= 1e-12
        && m.symmetric_eigenvalues().iter().all(|&l| l >= -1e-12)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcpWeights {
    pub stage: StateWeights,
    pub r: Matrix6<f64>,
    pub terminal: StateWeights,
}

impl OcpWeights {
    /// Terminal weight tied to the stage weight: `P = scale · Q`.
    pub fn new(stage: StateWeights, r: Matrix6<f64>, terminal_scale: f64) -> Self {
        Self {
            stage,
            r,
            terminal: stage.scaled(terminal_scale),
        }
    }

    /// `Q = diag(I₃, 30 I₃, 1000, 10 I₃)`, `R = diag(0.2 I₃, 100 I₃)`, `P = 20 Q`.
    pub fn formation_default() -> Self {
        let r = Matrix6::from_diagonal(&nalgebra::Vector6::new(0.2, 0.2, 0.2, 100.0, 100.0, 100.0));
        Self::new(StateWeights::diagonal(1.0, 30.0, 1000.0, 10.0), r, 20.0)
    }

    pub fn validate(&self) -> Result<(), NmpcError> {
        let r_sym = (self.r - self.r.transpose()).amax() <= 1e-12;
        let r_psd = r_sym && self.r.symmetric_eigenvalues().iter().all(|&l| l >= -1e-12);
        if !self.stage.is_psd() || !self.terminal.is_psd() || !r_psd {
            return Err(NmpcError::Invalid("weights must be symmetric positive semi-definite"));
        }
        Ok(())
    }
}

/// Symmetric per-axis actuation limits: `|F_i| <= force_max_i`, `|tau_i| <= torque_max_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputBounds {
    pub force_max: Vec3,
    pub torque_max: Vec3,
}

impl InputBounds {
    pub fn symmetric(force_max: f64, torque_max: f64) -> Self {
        Self {
            force_max: Vec3::repeat(force_max),
            torque_max: Vec3::repeat(torque_max),
        }
    }

    pub fn upper(&self) -> [f64; 6] {
        [
            self.force_max.x,
            self.force_max.y,
            self.force_max.z,
            self.torque_max.x,
            self.torque_max.y,
            self.torque_max.z,
        ]
    }

    pub fn clamp(&self, w: &Wrench) -> Wrench {
        let hi = self.upper();
        let mut u = w.to_vector();
        for i in 0..6 {
            u[i] = u[i].clamp(-hi[i], hi[i]);
        }
        Wrench::from_vector(&u)
    }

    pub fn contains(&self, w: &Wrench, tol: f64) -> bool {
        let hi = self.upper();
        let u = w.to_vector();
        (0..6).all(|i| u[i].abs() <= hi[i] + tol)
    }
}

/// Another agent's predicted positions over the horizon, to be kept at least `d_min` away.
#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub agent_id: String,
    pub positions: Vec<Vec3>,
    pub d_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpProblem {
    pub x0: RigidBodyState,
    /// `horizon + 1` reference states.
    pub refs: Vec<RigidBodyState>,
    pub weights: OcpWeights,
    pub horizon: usize,
    pub dt: f64,
    pub model: RigidBodyModel,
    pub input_bounds: InputBounds,
    /// Per-axis Hill-frame speed limit; `None` leaves velocity unbounded.
    pub velocity_max: Option<Vec3>,
    pub obstacles: Vec<Obstacle>,
}

impl OcpProblem {
    pub fn validate(&self) -> Result<(), NmpcError> {
        if self.horizon == 0 {
            return Err(NmpcError::Invalid("horizon must be at least 1"));
        }
        if !(self.dt > 0.0) {
            return Err(NmpcError::Invalid("dt must be positive"));
        }
        if self.refs.len() != self.horizon + 1 {
            return Err(NmpcError::ReferenceLength {
                expected: self.horizon + 1,
                found: self.refs.len(),
            });
        }
        if (quat_norm(&self.x0.q_hb) - 1.0).abs() > 1e-6 {
            return Err(NmpcError::Invalid("initial quaternion must be unit-norm"));
        }
        for (i, r) in self.refs.iter().enumerate() {
            if (quat_norm(&r.q_hb) - 1.0).abs() > 1e-6 {
                return Err(NmpcError::NonUnitQuaternion(i));
            }
        }
        for o in &self.obstacles {
            if o.positions.len() != self.horizon + 1 {
                return Err(NmpcError::ObstacleLength {
                    agent: o.agent_id.clone(),
                    expected: self.horizon + 1,
                    found: o.positions.len(),
                });
            }
            if !(o.d_min >= 0.0) {
                return Err(NmpcError::Invalid("d_min must be non-negative"));
            }
        }
        let hi = self.input_bounds.upper();
        if hi.iter().any(|&b| !(b >= 0.0)) {
            return Err(NmpcError::Invalid("input bounds must be non-negative"));
        }
        if let Some(v) = self.velocity_max {
            if v.iter().any(|&b| !(b > 0.0)) {
                return Err(NmpcError::Invalid("velocity bounds must be positive"));
            }
        }
        self.weights.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Infeasible,
}

/// Merit before and after one accepted SQP step, both evaluated at the same penalty weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeritRecord {
    pub penalty_weight: f64,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub u_seq: Vec<Wrench>,
    pub x_pred: Vec<RigidBodyState>,
    /// Tracking cost (stage + terminal), without constraint penalties.
    pub cost: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub penalty_weight: f64,
    /// Largest separation or velocity-bound violation along the prediction.
    pub max_violation: f64,
    pub merit_history: Vec<MeritRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub max_iter: usize,
    pub kkt_tol: f64,
    pub penalty_init: f64,
    pub penalty_cap: f64,
    /// Violations below this do not trigger a penalty increase.
    pub violation_tol: f64,
    /// Violations above this at exit mark the solve infeasible.
    pub infeasible_tol: f64,
    pub regularization: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iter: 50,
            kkt_tol: 1e-4,
            penalty_init: 1e3,
            penalty_cap: 1e9,
            violation_tol: 1e-3,
            infeasible_tol: 0.05,
            regularization: 1e-8,
        }
    }
}

pub use sqp::{solve_ocp, solve_ocp_with};
