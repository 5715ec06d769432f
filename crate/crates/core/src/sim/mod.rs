//! Plant side of a formation scenario: thruster allocation, PWM, plant stepping and the
//! leader's waypoint schedule.

mod pwm;
mod scenario;
mod thrusters;
mod waypoint;

pub use pwm::{plant_step, pwm_quantize, schedule_wrench, PwmSchedule, MIN_ON_TIME, PLANT_DT, PWM_WINDOW};
pub use scenario::{
    default_waypoints, formation_errors, min_separation, run_lockstep, AgentSpec, LayoutKind, Plant, RunRecord,
    ScenarioConfig, ScenarioError,
};
pub use thrusters::{allocate, Allocation, LayoutError, Thruster, ThrusterLayout, LEVER_ARM, NOMINAL_THRUST};
pub use waypoint::{waypoint_reference, Waypoint, WaypointError, WaypointPlan};
