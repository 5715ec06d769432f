//! Reference generation: follower slots from a leader prediction, and time alignment of
//! broadcast trajectories onto the local prediction grid.

use alloc::vec::Vec;

use crate::dynamics::{RigidBodyState, StateVector};
use crate::math::{quat_identity, quat_norm, quat_normalize, quat_to_wxyz, Quat, Vec3};
use crate::msgs::convert::StampedTrajectory;

use super::NmpcError;

/// Desired pose of a follower relative to its leader, in the Hill frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormationOffset {
    pub dp: Vec3,
    pub dq: Quat,
}

impl FormationOffset {
    pub fn new(dp: Vec3, dq: Quat) -> Result<Self, NmpcError> {
        if (quat_norm(&dq) - 1.0).abs() > 1e-6 {
            return Err(NmpcError::Invalid("offset quaternion must be unit-norm"));
        }
        Ok(Self { dp, dq })
    }

    pub fn translation(dp: Vec3) -> Self {
        Self {
            dp,
            dq: quat_identity(),
        }
    }
}

/// Shifts each leader state by the offset: `p + Δp`, `Δq ⊗ q`, velocities and rates copied.
pub fn build_follower_refs(
    leader_pred: &[RigidBodyState],
    offset: &FormationOffset,
    horizon: usize,
) -> Result<Vec<RigidBodyState>, NmpcError> {
    if leader_pred.len() != horizon + 1 {
        return Err(NmpcError::ReferenceLength {
            expected: horizon + 1,
            found: leader_pred.len(),
        });
    }
    if let Some(i) = leader_pred
        .iter()
        .position(|s| (quat_norm(&s.q_hb) - 1.0).abs() > 1e-6)
    {
        return Err(NmpcError::NonUnitQuaternion(i));
    }
    Ok(leader_pred
        .iter()
        .map(|s| RigidBodyState {
            p_h: s.p_h + offset.dp,
            v_h: s.v_h,
            q_hb: quat_normalize(&(offset.dq * s.q_hb)),
            omega_b: s.omega_b,
        })
        .collect())
}

fn lerp_state(a: &RigidBodyState, b: &RigidBodyState, s: f64) -> RigidBodyState {
    let xa = a.to_vector();
    let mut xb = b.to_vector();
    // Interpolate quaternions on the same hemisphere.
    if quat_to_wxyz(&a.q_hb).dot(&quat_to_wxyz(&b.q_hb)) < 0.0 {
        let mut q = xb.fixed_rows_mut::<4>(6);
        q *= -1.0;
    }
    let x: StateVector = xa + (xb - xa) * s;
    let mut out = RigidBodyState::from_vector(&x);
    out.q_hb = quat_normalize(&out.q_hb);
    out
}

/// Samples a stamped trajectory at `t0_ns + k·dt_ns` for `k = 0..len`, interpolating linearly
/// between stamps and holding the first/last state outside the covered interval.
/// Returns `None` for an empty trajectory.
pub fn align_trajectory(
    traj: &StampedTrajectory,
    t0_ns: i64,
    dt_ns: i64,
    len: usize,
) -> Option<Vec<RigidBodyState>> {
    let states = &traj.states;
    let (first, last) = (states.first()?, states.last()?);
    let mut out = Vec::with_capacity(len);
    let mut j = 0;
    for k in 0..len {
        let t = t0_ns + k as i64 * dt_ns;
        if t <= first.0 {
            out.push(first.1);
            continue;
        }
        if t >= last.0 {
            out.push(last.1);
            continue;
        }
        while states[j + 1].0 < t {
            j += 1;
        }
        let (ta, a) = &states[j];
        let (tb, b) = &states[j + 1];
        let s = if tb > ta {
            (t - ta) as f64 / (tb - ta) as f64
        } else {
            1.0
        };
        out.push(lerp_state(a, b, s));
    }
    Some(out)
}

/// A broadcast is stale once it is more than `max_periods` control periods old.
pub fn is_stale(traj: &StampedTrajectory, now_ns: i64, period_ns: i64, max_periods: i64) -> bool {
    now_ns - traj.stamp_ns > max_periods * period_ns
}
