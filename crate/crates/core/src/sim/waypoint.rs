//! Leader waypoint schedule: hold each pose for a fixed dwell, optionally cycling.

use alloc::vec::Vec;

use thiserror::Error;

use crate::dynamics::RigidBodyState;
use crate::math::{floor, quat_norm, Quat, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WaypointError {
    #[error("waypoint plan is empty")]
    Empty,
    #[error("dwell time must be positive")]
    Dwell,
    #[error("waypoint {0} has a non-unit quaternion")]
    NonUnitQuaternion(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub position: Vec3,
    pub attitude: Quat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaypointPlan {
    waypoints: Vec<Waypoint>,
    dwell: f64,
    cyclic: bool,
}

impl WaypointPlan {
    pub fn new(waypoints: Vec<Waypoint>, dwell: f64, cyclic: bool) -> Result<Self, WaypointError> {
        if waypoints.is_empty() {
            return Err(WaypointError::Empty);
        }
        if !(dwell > 0.0) {
            return Err(WaypointError::Dwell);
        }
        if let Some(i) = waypoints
            .iter()
            .position(|w| (quat_norm(&w.attitude) - 1.0).abs() > 1e-6)
        {
            return Err(WaypointError::NonUnitQuaternion(i));
        }
        Ok(Self {
            waypoints,
            dwell,
            cyclic,
        })
    }

    /// A single pose held forever.
    pub fn hold(position: Vec3, attitude: Quat) -> Result<Self, WaypointError> {
        Self::new(alloc::vec![Waypoint { position, attitude }], 1.0, false)
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn dwell(&self) -> f64 {
        self.dwell
    }

    pub fn cyclic(&self) -> bool {
        self.cyclic
    }

    /// Index of the waypoint active at `t` seconds; non-cyclic plans hold the last one.
    pub fn active_index(&self, t: f64) -> usize {
        let k = floor(t.max(0.0) / self.dwell) as usize;
        if self.cyclic {
            k % self.waypoints.len()
        } else {
            k.min(self.waypoints.len() - 1)
        }
    }
}

/// The active waypoint as a hold reference: its pose with zero velocity and rate.
pub fn waypoint_reference(plan: &WaypointPlan, t: f64) -> RigidBodyState {
    let w = &plan.waypoints[plan.active_index(t)];
    RigidBodyState {
        p_h: w.position,
        q_hb: w.attitude,
        ..Default::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{quat_from_axis_angle, quat_identity};
    use alloc::vec;

    fn plan(cyclic: bool) -> WaypointPlan {
        WaypointPlan::new(
            vec![
                Waypoint {
                    position: Vec3::new(0.0, 0.0, 0.0),
                    attitude: quat_identity(),
                },
                Waypoint {
                    position: Vec3::new(1.0, 0.0, 0.0),
                    attitude: quat_from_axis_angle(&Vec3::z(), 0.5),
                },
                Waypoint {
                    position: Vec3::new(1.0, 1.0, 0.0),
                    attitude: quat_identity(),
                },
            ],
            20.0,
            cyclic,
        )
        .unwrap()
    }

    #[test]
    fn schedule_examples() {
        let p = plan(true);
        assert_eq!(waypoint_reference(&p, 0.0).p_h, Vec3::zeros());
        let r = waypoint_reference(&p, 20.0 + 1e-9);
        assert_eq!(r.p_h, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(r.v_h, Vec3::zeros());
        assert_eq!(waypoint_reference(&p, 60.0).p_h, Vec3::zeros());
        assert_eq!(waypoint_reference(&p, 3.0 * 60.0 + 5.0).p_h, Vec3::zeros());
        assert_eq!(plan(false).active_index(1000.0), 2);
    }

    #[test]
    fn invalid_plans() {
        assert_eq!(WaypointPlan::new(vec![], 20.0, true), Err(WaypointError::Empty));
        let w = Waypoint {
            position: Vec3::zeros(),
            attitude: quat_identity(),
        };
        assert_eq!(WaypointPlan::new(vec![w], 0.0, true), Err(WaypointError::Dwell));
        let bad = Waypoint {
            attitude: quat_identity() * 2.0,
            ..w
        };
        assert_eq!(
            WaypointPlan::new(vec![w, bad], 1.0, true),
            Err(WaypointError::NonUnitQuaternion(1))
        );
    }
}
