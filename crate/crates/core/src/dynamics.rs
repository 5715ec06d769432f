//! Relative orbital motion about a circular leader orbit and rigid-body attitude motion.
//!
//! Translational motion is expressed in the leader-centred Hill frame (x radial, y along-track,
//! z along the orbit normal) and follows the Clohessy–Wiltshire equations. Attitude uses a
//! scalar-first Hamilton quaternion `q_hb` that maps body-frame vectors into the Hill frame.
//!
//! The 13-component state vector layout is `[p_h (3), v_h (3), q_hb (w, x, y, z), omega_b (3)]`;
//! the 6-component input layout is `[force_b (3), torque_b (3)]`.

use nalgebra::{Matrix6, SMatrix, SVector, Vector4, Vector6};
use thiserror::Error;

use crate::math::{
    cos, quat_from_wxyz, quat_identity, quat_norm, quat_rotate_jacobian, quat_rotation_quadratic,
    quat_to_wxyz, sin, skew, sqrt, Mat3, Quat, Vec3,
};

pub const STATE_DIM: usize = 13;
pub const INPUT_DIM: usize = 6;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type InputVector = Vector6<f64>;
pub type StateJacobian = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputJacobian = SMatrix<f64, STATE_DIM, INPUT_DIM>;

/// Earth gravitational parameter (WGS-84), m³/s².
pub const MU_EARTH: f64 = 3.986004418e14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("degenerate orbit: |p x v| = {0:e} (radial or zero trajectory)")]
    DegenerateOrbit(f64),
    #[error("domain error: {0}")]
    Domain(&'static str),
    #[error("inertia matrix is not invertible")]
    SingularInertia,
    #[error("inertia matrix is not symmetric positive definite")]
    InvalidInertia,
    #[error("quaternion norm {0} deviates from unity")]
    NonUnitQuaternion(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InertialState {
    pub p: Vec3,
    pub v: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HillFrame {
    pub x_hat: Vec3,
    pub y_hat: Vec3,
    pub z_hat: Vec3,
    pub origin: Vec3,
}

impl HillFrame {
    /// Rotation taking Hill-frame components to inertial components.
    pub fn to_inertial(&self) -> Mat3 {
        Mat3::from_columns(&[self.x_hat, self.y_hat, self.z_hat])
    }
}

/// Leader-centred Hill frame from the leader's inertial position and velocity.
pub fn build_hill_frame(state: &InertialState) -> Result<HillFrame, DynamicsError> {
    let p_norm = state.p.norm();
    if !(p_norm > 0.0) {
        return Err(DynamicsError::Domain("position must be non-zero"));
    }
    let h = state.p.cross(&state.v);
    let h_norm = h.norm();
    if !(h_norm > 1e-12 * p_norm * state.v.norm()) || h_norm == 0.0 {
        return Err(DynamicsError::DegenerateOrbit(h_norm));
    }
    let x_hat = state.p / p_norm;
    let z_hat = h / h_norm;
    let y_hat = z_hat.cross(&x_hat);
    Ok(HillFrame {
        x_hat,
        y_hat,
        z_hat,
        origin: state.p,
    })
}

/// Classical orbital elements; angles in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitalElements {
    pub a: f64,
    pub e: f64,
    pub i: f64,
    pub raan: f64,
    pub arg_periapsis: f64,
    pub true_anomaly: f64,
}

impl OrbitalElements {
    /// Keplerian elements to ECI position and velocity.
    pub fn to_inertial(&self, mu: f64) -> Result<InertialState, DynamicsError> {
        if !(mu > 0.0) || !(self.a > 0.0) {
            return Err(DynamicsError::Domain("mu and a must be positive"));
        }
        if !(0.0..1.0).contains(&self.e) {
            return Err(DynamicsError::Domain("eccentricity must be in [0, 1)"));
        }
        let slr = self.a * (1.0 - self.e * self.e);
        let (sn, cn) = (sin(self.true_anomaly), cos(self.true_anomaly));
        let r = slr / (1.0 + self.e * cn);
        let p_pf = Vec3::new(r * cn, r * sn, 0.0);
        let k = sqrt(mu / slr);
        let v_pf = Vec3::new(-k * sn, k * (self.e + cn), 0.0);
        let rot = rot_z(self.raan) * rot_x(self.i) * rot_z(self.arg_periapsis);
        Ok(InertialState {
            p: rot * p_pf,
            v: rot * v_pf,
        })
    }
}

fn rot_z(a: f64) -> Mat3 {
    let (s, c) = (sin(a), cos(a));
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = (sin(a), cos(a));
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Mean motion `sqrt(mu / a³)` in rad/s.
pub fn mean_motion(mu: f64, a: f64) -> Result<f64, DynamicsError> {
    if !(mu > 0.0) || !(a > 0.0) {
        return Err(DynamicsError::Domain("mu and a must be positive"));
    }
    Ok(sqrt(mu / (a * a * a)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitParams {
    pub mu: f64,
    pub a: f64,
    pub n: f64,
}

impl OrbitParams {
    pub fn new(mu: f64, a: f64) -> Result<Self, DynamicsError> {
        Ok(Self {
            mu,
            a,
            n: mean_motion(mu, a)?,
        })
    }

    /// Leader orbit about Earth with the given semi-major axis.
    pub fn earth(a: f64) -> Result<Self, DynamicsError> {
        Self::new(MU_EARTH, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyParams {
    pub mass: f64,
    pub inertia: Mat3,
    inertia_inv: Mat3,
}

impl BodyParams {
    pub fn new(mass: f64, inertia: Mat3) -> Result<Self, DynamicsError> {
        if !(mass > 0.0) {
            return Err(DynamicsError::Domain("mass must be positive"));
        }
        if (inertia - inertia.transpose()).amax() > 1e-12 {
            return Err(DynamicsError::InvalidInertia);
        }
        let eig = inertia.symmetric_eigenvalues();
        if eig.iter().any(|&l| !(l > 0.0)) {
            return Err(DynamicsError::InvalidInertia);
        }
        let inertia_inv = inertia.try_inverse().ok_or(DynamicsError::SingularInertia)?;
        Ok(Self {
            mass,
            inertia,
            inertia_inv,
        })
    }

    pub fn inertia_inv(&self) -> &Mat3 {
        &self.inertia_inv
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidBodyState {
    pub p_h: Vec3,
    pub v_h: Vec3,
    pub q_hb: Quat,
    pub omega_b: Vec3,
}

impl Default for RigidBodyState {
    fn default() -> Self {
        Self {
            p_h: Vec3::zeros(),
            v_h: Vec3::zeros(),
            q_hb: quat_identity(),
            omega_b: Vec3::zeros(),
        }
    }
}

impl RigidBodyState {
    pub fn at_position(p_h: Vec3) -> Self {
        Self {
            p_h,
            ..Self::default()
        }
    }

    pub fn to_vector(&self) -> StateVector {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.p_h);
        x.fixed_rows_mut::<3>(3).copy_from(&self.v_h);
        x.fixed_rows_mut::<4>(6).copy_from(&quat_to_wxyz(&self.q_hb));
        x.fixed_rows_mut::<3>(10).copy_from(&self.omega_b);
        x
    }

    pub fn from_vector(x: &StateVector) -> Self {
        Self {
            p_h: x.fixed_rows::<3>(0).into_owned(),
            v_h: x.fixed_rows::<3>(3).into_owned(),
            q_hb: quat_from_wxyz(&x.fixed_rows::<4>(6).into_owned()),
            omega_b: x.fixed_rows::<3>(10).into_owned(),
        }
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        let mut out = [0.0; STATE_DIM];
        out.copy_from_slice(self.to_vector().as_slice());
        out
    }

    pub fn from_array(a: &[f64; STATE_DIM]) -> Self {
        Self::from_vector(&StateVector::from_column_slice(a))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub force_b: Vec3,
    pub torque_b: Vec3,
}

impl Wrench {
    pub fn new(force_b: Vec3, torque_b: Vec3) -> Self {
        Self { force_b, torque_b }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_vector(&self) -> InputVector {
        InputVector::new(
            self.force_b.x,
            self.force_b.y,
            self.force_b.z,
            self.torque_b.x,
            self.torque_b.y,
            self.torque_b.z,
        )
    }

    pub fn from_vector(u: &InputVector) -> Self {
        Self {
            force_b: Vec3::new(u[0], u[1], u[2]),
            torque_b: Vec3::new(u[3], u[4], u[5]),
        }
    }
}

/// Translational acceleration in the Hill frame.
///
/// The body-frame force is rotated into the Hill frame through `q_hb` before entering the
/// Clohessy–Wiltshire equations.
pub fn cw_accel(state: &RigidBodyState, wrench: &Wrench, n: f64, mass: f64) -> Vec3 {
    let f_h = quat_rotation_quadratic(&state.q_hb) * wrench.force_b;
    cw_free_accel(&state.p_h, &state.v_h, n) + f_h / mass
}

#[inline]
fn cw_free_accel(p: &Vec3, v: &Vec3, n: f64) -> Vec3 {
    Vec3::new(
        2.0 * n * v.y + 3.0 * n * n * p.x,
        -2.0 * n * v.x,
        -n * n * p.z,
    )
}

/// Quaternion rate and angular acceleration.
pub fn attitude_deriv(
    q_hb: &Quat,
    omega_b: &Vec3,
    torque_b: &Vec3,
    inertia: &Mat3,
) -> Result<(Quat, Vec3), DynamicsError> {
    let norm = quat_norm(q_hb);
    if (norm - 1.0).abs() > 1e-6 {
        return Err(DynamicsError::NonUnitQuaternion(norm));
    }
    let inv = inertia.try_inverse().ok_or(DynamicsError::SingularInertia)?;
    Ok((
        quat_kinematics(q_hb, omega_b),
        euler_rate(omega_b, torque_b, inertia, &inv),
    ))
}

#[inline]
fn quat_kinematics(q: &Quat, omega: &Vec3) -> Quat {
    (q * Quat::new(0.0, omega.x, omega.y, omega.z)) * 0.5
}

#[inline]
fn euler_rate(omega: &Vec3, torque: &Vec3, inertia: &Mat3, inertia_inv: &Mat3) -> Vec3 {
    inertia_inv * (torque - omega.cross(&(inertia * omega)))
}

/// Orbit plus body parameters; everything needed to propagate one spacecraft.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidBodyModel {
    pub orbit: OrbitParams,
    pub body: BodyParams,
}

impl RigidBodyModel {
    pub fn new(orbit: OrbitParams, body: BodyParams) -> Self {
        Self { orbit, body }
    }

    /// Continuous-time state derivative.
    pub fn derivative(&self, x: &StateVector, u: &InputVector) -> StateVector {
        let p = x.fixed_rows::<3>(0).into_owned();
        let v = x.fixed_rows::<3>(3).into_owned();
        let q = quat_from_wxyz(&x.fixed_rows::<4>(6).into_owned());
        let w = x.fixed_rows::<3>(10).into_owned();
        let force = u.fixed_rows::<3>(0).into_owned();
        let torque = u.fixed_rows::<3>(3).into_owned();

        let acc = cw_free_accel(&p, &v, self.orbit.n)
            + quat_rotation_quadratic(&q) * force / self.body.mass;
        let qdot = quat_kinematics(&q, &w);
        let wdot = euler_rate(&w, &torque, &self.body.inertia, &self.body.inertia_inv);

        let mut dx = StateVector::zeros();
        dx.fixed_rows_mut::<3>(0).copy_from(&v);
        dx.fixed_rows_mut::<3>(3).copy_from(&acc);
        dx.fixed_rows_mut::<4>(6).copy_from(&quat_to_wxyz(&qdot));
        dx.fixed_rows_mut::<3>(10).copy_from(&wdot);
        dx
    }

    /// Analytic Jacobians of [`Self::derivative`] with respect to state and input.
    pub fn derivative_jacobian(
        &self,
        x: &StateVector,
        u: &InputVector,
    ) -> (StateJacobian, InputJacobian) {
        let n = self.orbit.n;
        let m = self.body.mass;
        let q = quat_from_wxyz(&x.fixed_rows::<4>(6).into_owned());
        let r = Vec3::new(q.i, q.j, q.k);
        let w = x.fixed_rows::<3>(10).into_owned();
        let force = u.fixed_rows::<3>(0).into_owned();
        let inertia = &self.body.inertia;
        let inv = &self.body.inertia_inv;

        let mut fx = StateJacobian::zeros();
        let mut fu = InputJacobian::zeros();

        fx.fixed_view_mut::<3, 3>(0, 3).copy_from(&Mat3::identity());

        fx[(3, 0)] = 3.0 * n * n;
        fx[(5, 2)] = -n * n;
        fx[(3, 4)] = 2.0 * n;
        fx[(4, 3)] = -2.0 * n;
        fx.fixed_view_mut::<3, 4>(3, 6)
            .copy_from(&(quat_rotate_jacobian(&q, &force).transpose() / m));
        fu.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(quat_rotation_quadratic(&q) / m));

        // q' = 1/2 [ -r.w ; q_w w + r x w ]
        fx[(6, 7)] = -0.5 * w.x;
        fx[(6, 8)] = -0.5 * w.y;
        fx[(6, 9)] = -0.5 * w.z;
        fx.fixed_view_mut::<3, 1>(7, 6).copy_from(&(w * 0.5));
        fx.fixed_view_mut::<3, 3>(7, 7)
            .copy_from(&(skew(&w) * -0.5));
        fx[(6, 10)] = -0.5 * r.x;
        fx[(6, 11)] = -0.5 * r.y;
        fx[(6, 12)] = -0.5 * r.z;
        fx.fixed_view_mut::<3, 3>(7, 10)
            .copy_from(&((Mat3::identity() * q.w + skew(&r)) * 0.5));

        let jw = inertia * w;
        fx.fixed_view_mut::<3, 3>(10, 10)
            .copy_from(&(-(inv * (skew(&w) * inertia - skew(&jw)))));
        fu.fixed_view_mut::<3, 3>(10, 3).copy_from(inv);

        (fx, fu)
    }

    /// One classical RK4 step with the quaternion renormalized afterwards.
    pub fn step(&self, x: &StateVector, u: &InputVector, dt: f64) -> StateVector {
        let k1 = self.derivative(x, u);
        let k2 = self.derivative(&(x + k1 * (0.5 * dt)), u);
        let k3 = self.derivative(&(x + k2 * (0.5 * dt)), u);
        let k4 = self.derivative(&(x + k3 * dt), u);
        let mut next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        normalize_quaternion_block(&mut next);
        next
    }

    /// RK4 step together with its exact Jacobians `(d next/dx, d next/du)`.
    pub fn step_with_sensitivity(
        &self,
        x: &StateVector,
        u: &InputVector,
        dt: f64,
    ) -> (StateVector, StateJacobian, InputJacobian) {
        type Sens = SMatrix<f64, STATE_DIM, { STATE_DIM + INPUT_DIM }>;

        let mut s1 = Sens::zeros();
        s1.fixed_view_mut::<STATE_DIM, STATE_DIM>(0, 0)
            .copy_from(&StateJacobian::identity());

        let stage_sens = |s: &StateVector, ds: &Sens| -> Sens {
            let (fx, fu) = self.derivative_jacobian(s, u);
            let mut k = fx * ds;
            let mut ku = k.fixed_view_mut::<STATE_DIM, INPUT_DIM>(0, STATE_DIM);
            ku += fu;
            k
        };

        let k1 = self.derivative(x, u);
        let dk1 = stage_sens(x, &s1);
        let x2 = x + k1 * (0.5 * dt);
        let s2 = s1 + dk1 * (0.5 * dt);
        let k2 = self.derivative(&x2, u);
        let dk2 = stage_sens(&x2, &s2);
        let x3 = x + k2 * (0.5 * dt);
        let s3 = s1 + dk2 * (0.5 * dt);
        let k3 = self.derivative(&x3, u);
        let dk3 = stage_sens(&x3, &s3);
        let x4 = x + k3 * dt;
        let s4 = s1 + dk3 * dt;
        let k4 = self.derivative(&x4, u);
        let dk4 = stage_sens(&x4, &s4);

        let mut next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        let mut sens = s1 + (dk1 + dk2 * 2.0 + dk3 * 2.0 + dk4) * (dt / 6.0);

        // Chain rule through q -> q/|q|.
        let q = next.fixed_rows::<4>(6).into_owned();
        let norm = q.norm();
        let qn = q / norm;
        let proj = (nalgebra::Matrix4::identity() - qn * qn.transpose()) / norm;
        let rows = sens.fixed_rows::<4>(6).into_owned();
        sens.fixed_rows_mut::<4>(6).copy_from(&(proj * rows));
        next.fixed_rows_mut::<4>(6).copy_from(&qn);

        let a = sens.fixed_view::<STATE_DIM, STATE_DIM>(0, 0).into_owned();
        let b = sens.fixed_view::<STATE_DIM, INPUT_DIM>(0, STATE_DIM).into_owned();
        (next, a, b)
    }
}

fn normalize_quaternion_block(x: &mut StateVector) {
    let q: Vector4<f64> = x.fixed_rows::<4>(6).into_owned();
    let norm = q.norm();
    x.fixed_rows_mut::<4>(6).copy_from(&(q / norm));
}

/// One RK4 step of the full 13-state model.
pub fn step_rk4(
    state: &RigidBodyState,
    wrench: &Wrench,
    model: &RigidBodyModel,
    dt: f64,
) -> Result<RigidBodyState, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::Domain("dt must be positive"));
    }
    let norm = quat_norm(&state.q_hb);
    if (norm - 1.0).abs() > 1e-6 {
        return Err(DynamicsError::NonUnitQuaternion(norm));
    }
    Ok(RigidBodyState::from_vector(&model.step(
        &state.to_vector(),
        &wrench.to_vector(),
        dt,
    )))
}

/// Closed-form state-transition matrix of the unforced Clohessy–Wiltshire system,
/// acting on `[x, y, z, vx, vy, vz]`.
pub fn cw_stm(n: f64, dt: f64) -> Matrix6<f64> {
    let nt = n * dt;
    let (s, c) = (sin(nt), cos(nt));
    #[rustfmt::skip]
    let m = Matrix6::new(
        4.0 - 3.0 * c,          0.0, 0.0,  s / n,               2.0 * (1.0 - c) / n,         0.0,
        6.0 * (s - nt),         1.0, 0.0,  -2.0 * (1.0 - c) / n, (4.0 * s - 3.0 * nt) / n,    0.0,
        0.0,                    0.0, c,    0.0,                 0.0,                         s / n,
        3.0 * n * s,            0.0, 0.0,  c,                   2.0 * s,                     0.0,
        -6.0 * n * (1.0 - c),   0.0, 0.0,  -2.0 * s,            4.0 * c - 3.0,               0.0,
        0.0,                    0.0, -n * s, 0.0,               0.0,                         c,
    );
    m
}
