//! Pulse-width modulation of thrust levels and plant propagation under a PWM schedule.

use alloc::vec::Vec;

use crate::dynamics::{RigidBodyModel, RigidBodyState, Wrench};

use super::ThrusterLayout;

/// Default PWM window (10 Hz), seconds.
pub const PWM_WINDOW: f64 = 0.1;
/// Shortest pulse a valve can produce, seconds.
pub const MIN_ON_TIME: f64 = 0.001;
/// Default plant integration step, seconds.
pub const PLANT_DT: f64 = 0.02;

/// Per-thruster on-times measured from the start of a window; every valve opens at the start.
#[derive(Debug, Clone, PartialEq)]
pub struct PwmSchedule {
    pub on_times: Vec<f64>,
    pub window: f64,
    pub nominal_thrust: f64,
}

impl PwmSchedule {
    pub fn off(thrusters: usize, window: f64, nominal_thrust: f64) -> Self {
        Self {
            on_times: alloc::vec![0.0; thrusters],
            window,
            nominal_thrust,
        }
    }

    /// Thrust levels equivalent to the schedule averaged over the window.
    pub fn mean_thrust(&self) -> Vec<f64> {
        self.on_times
            .iter()
            .map(|t| self.nominal_thrust * t / self.window)
            .collect()
    }

    /// Thrust of each thruster at time `tau` into the window.
    fn thrust_at(&self, tau: f64) -> Vec<f64> {
        self.on_times
            .iter()
            .map(|&on| if tau < on { self.nominal_thrust } else { 0.0 })
            .collect()
    }
}

/// `on = clamp(thrust / nominal, 0, 1) · window`, with pulses shorter than `min_on` rounded to
/// `0` below `min_on / 2` and to `min_on` otherwise.
pub fn pwm_quantize(thrust: &[f64], window: f64, min_on: f64, nominal_thrust: f64) -> PwmSchedule {
    debug_assert!(window > min_on);
    let on_times = thrust
        .iter()
        .map(|&t| {
            let on = (t / nominal_thrust).clamp(0.0, 1.0) * window;
            if on > 0.0 && on < min_on {
                if on < 0.5 * min_on {
                    0.0
                } else {
                    min_on
                }
            } else {
                on
            }
        })
        .collect();
    PwmSchedule {
        on_times,
        window,
        nominal_thrust,
    }
}

/// Propagates from `t0` to `t0 + dt` seconds into the current PWM window. The interval is
/// cut at every valve-close instant and sub-stepped at no more than `max_step`, so the
/// thrust is constant over every RK4 step.
pub fn plant_step(
    state: &RigidBodyState,
    schedule: &PwmSchedule,
    layout: &ThrusterLayout,
    model: &RigidBodyModel,
    t0: f64,
    dt: f64,
    max_step: f64,
) -> RigidBodyState {
    debug_assert!(t0 + dt <= schedule.window + 1e-9);
    let t1 = t0 + dt;
    let mut events: Vec<f64> = schedule
        .on_times
        .iter()
        .copied()
        .filter(|&e| e > t0 && e < t1)
        .collect();
    events.push(t1);
    events.sort_by(f64::total_cmp);
    events.dedup();

    let mut x = state.to_vector();
    let mut t = t0;
    for end in events {
        let span = end - t;
        if span <= 0.0 {
            continue;
        }
        let wrench = layout.wrench(&schedule.thrust_at(0.5 * (t + end))).to_vector();
        let steps = libm::ceil(span / max_step).max(1.0) as usize;
        let h = span / steps as f64;
        for _ in 0..steps {
            x = model.step(&x, &wrench, h);
        }
        t = end;
    }
    RigidBodyState::from_vector(&x)
}

/// Realized mean wrench of a schedule over its window.
pub fn schedule_wrench(schedule: &PwmSchedule, layout: &ThrusterLayout) -> Wrench {
    layout.wrench(&schedule.mean_thrust())
}
