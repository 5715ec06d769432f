use alloc::vec::Vec;

use crate::dynamics::{InputVector, RigidBodyState, StateJacobian, StateVector, Wrench};
use crate::math::{quat_to_wxyz, Mat3, Vec3};

use super::{Obstacle, OcpWeights, StateWeights};

fn quad(e: &Vec3, m: &Mat3) -> f64 {
    e.dot(&(m * e))
}

/// `1 − (qᵀ q_ref)²`, zero for both `q_ref` and `−q_ref`.
fn attitude_error(x: &RigidBodyState, r: &RigidBodyState) -> f64 {
    let d = quat_to_wxyz(&x.q_hb).dot(&quat_to_wxyz(&r.q_hb));
    1.0 - d * d
}

fn state_cost(x: &RigidBodyState, r: &RigidBodyState, w: &StateWeights) -> f64 {
    let s = attitude_error(x, r);
    quad(&(x.p_h - r.p_h), &w.p)
        + quad(&(x.v_h - r.v_h), &w.v)
        + w.q * s * s
        + quad(&(x.omega_b - r.omega_b), &w.w)
}

/// Stage cost: weighted position, velocity, attitude and rate errors plus input effort.
pub fn stage_cost(x: &RigidBodyState, u: &Wrench, r: &RigidBodyState, w: &OcpWeights) -> f64 {
    let uv = u.to_vector();
    state_cost(x, r, &w.stage) + uv.dot(&(w.r * uv))
}

/// Horizon-end cost with the terminal weights and no input term.
pub fn terminal_cost(x: &RigidBodyState, r: &RigidBodyState, w: &OcpWeights) -> f64 {
    state_cost(x, r, &w.terminal)
}

/// `‖p(n) − p_b(n)‖ − d_min` for every step `n` (outer) and obstacle `b` (inner).
pub fn collision_residuals(positions: &[Vec3], obstacles: &[Obstacle]) -> Vec<Vec<f64>> {
    positions
        .iter()
        .enumerate()
        .map(|(n, p)| {
            obstacles
                .iter()
                .map(|o| (p - o.positions[n]).norm() - o.d_min)
                .collect()
        })
        .collect()
}

/// Gradient and Gauss–Newton Hessian of a state cost term with respect to the 13-vector.
pub(crate) fn state_cost_derivatives(
    x: &StateVector,
    r: &StateVector,
    w: &StateWeights,
    grad: &mut StateVector,
    hess: &mut StateJacobian,
) {
    let mut add_block = |off: usize, m: &Mat3| {
        let e = x.fixed_rows::<3>(off) - r.fixed_rows::<3>(off);
        let g = (m + m.transpose()) * e;
        let mut gs = grad.fixed_rows_mut::<3>(off);
        gs += g;
        let mut hs = hess.fixed_view_mut::<3, 3>(off, off);
        hs += m + m.transpose();
    };
    add_block(0, &w.p);
    add_block(3, &w.v);
    add_block(10, &w.w);

    if w.q > 0.0 {
        let q = x.fixed_rows::<4>(6);
        let qr = r.fixed_rows::<4>(6);
        let d = q.dot(&qr);
        let s = 1.0 - d * d;
        // ds/dq = -2 d q_ref
        let ds = qr * (-2.0 * d);
        let mut gs = grad.fixed_rows_mut::<4>(6);
        gs += ds * (2.0 * w.q * s);
        let mut hs = hess.fixed_view_mut::<4, 4>(6, 6);
        hs += ds * ds.transpose() * (2.0 * w.q);
    }
}

pub(crate) fn input_cost_derivatives(u: &InputVector, w: &OcpWeights) -> (InputVector, nalgebra::Matrix6<f64>) {
    let sym = w.r + w.r.transpose();
    (sym * u, sym)
}

/// Exterior quadratic penalty `rho · Σ max(0, −residual)²` for separations and speed limits
/// at one node. Returns `(penalty, largest violation)` and accumulates derivatives when given.
pub(crate) fn node_penalty(
    x: &StateVector,
    node: usize,
    obstacles: &[Obstacle],
    velocity_max: Option<&Vec3>,
    rho: f64,
    mut derivs: Option<(&mut StateVector, &mut StateJacobian)>,
) -> (f64, f64) {
    let p = x.fixed_rows::<3>(0).into_owned();
    let mut pen = 0.0;
    let mut worst = 0.0f64;
    for o in obstacles {
        let diff = p - o.positions[node];
        let dist = diff.norm();
        let viol = o.d_min - dist;
        if viol <= 0.0 {
            continue;
        }
        worst = worst.max(viol);
        pen += rho * viol * viol;
        if let Some((g, h)) = derivs.as_mut() {
            let dir = if dist > 1e-12 { diff / dist } else { Vec3::x() };
            // d(viol)/dp = -dir
            let mut gs = g.fixed_rows_mut::<3>(0);
            gs -= dir * (2.0 * rho * viol);
            let mut hs = h.fixed_view_mut::<3, 3>(0, 0);
            hs += dir * dir.transpose() * (2.0 * rho);
        }
    }
    if let Some(vmax) = velocity_max {
        for i in 0..3 {
            let v = x[3 + i];
            let viol = v.abs() - vmax[i];
            if viol <= 0.0 {
                continue;
            }
            worst = worst.max(viol);
            pen += rho * viol * viol;
            if let Some((g, h)) = derivs.as_mut() {
                g[3 + i] += 2.0 * rho * viol * v.signum();
                h[(3 + i, 3 + i)] += 2.0 * rho;
            }
        }
    }
    (pen, worst)
}
