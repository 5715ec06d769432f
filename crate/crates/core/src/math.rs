//! Small numeric helpers shared by the dynamics and solver modules.
//!
//! The crate is `no_std`, so transcendental functions go through `libm`.

use nalgebra::{Matrix3, Matrix4x3, Quaternion, Vector3, Vector4};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Quat = Quaternion<f64>;

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}

#[inline]
pub fn acos(x: f64) -> f64 {
    libm::acos(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

/// Cross-product matrix: `skew(a) * b == a.cross(&b)`.
pub fn skew(a: &Vec3) -> Mat3 {
    Mat3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Scalar-first quaternion constructor.
#[inline]
pub fn quat(w: f64, x: f64, y: f64, z: f64) -> Quat {
    Quaternion::new(w, x, y, z)
}

#[inline]
pub fn quat_identity() -> Quat {
    Quaternion::new(1.0, 0.0, 0.0, 0.0)
}

/// Scalar-first 4-vector `[w, x, y, z]`.
#[inline]
pub fn quat_to_wxyz(q: &Quat) -> Vector4<f64> {
    Vector4::new(q.w, q.i, q.j, q.k)
}

#[inline]
pub fn quat_from_wxyz(v: &Vector4<f64>) -> Quat {
    Quaternion::new(v[0], v[1], v[2], v[3])
}

pub fn quat_norm(q: &Quat) -> f64 {
    sqrt(q.w * q.w + q.i * q.i + q.j * q.j + q.k * q.k)
}

pub fn quat_normalize(q: &Quat) -> Quat {
    let n = quat_norm(q);
    Quaternion::new(q.w / n, q.i / n, q.j / n, q.k / n)
}

/// Unit quaternion for a rotation of `angle` radians about `axis` (normalized here).
pub fn quat_from_axis_angle(axis: &Vec3, angle: f64) -> Quat {
    let a = axis / sqrt(axis.dot(axis));
    let (s, c) = (sin(0.5 * angle), cos(0.5 * angle));
    Quaternion::new(c, a.x * s, a.y * s, a.z * s)
}

/// Homogeneous rotation form `(w² − r·r) I + 2 r rᵀ + 2 w [r]×`.
///
/// Equals the rotation matrix of `q` when `q` is a unit quaternion and scales by `‖q‖²`
/// otherwise, which keeps RK4 stages (where `q` drifts off the unit sphere) smooth.
pub fn quat_rotation_quadratic(q: &Quat) -> Mat3 {
    let r = Vec3::new(q.i, q.j, q.k);
    let w = q.w;
    Mat3::identity() * (w * w - r.dot(&r)) + r * r.transpose() * 2.0 + skew(&r) * (2.0 * w)
}

/// Rotation matrix of a (normalized) quaternion.
pub fn quat_to_rotation(q: &Quat) -> Mat3 {
    quat_rotation_quadratic(&quat_normalize(q))
}

/// Jacobian of `quat_rotation_quadratic(q) * v` with respect to `[w, x, y, z]`.
pub fn quat_rotate_jacobian(q: &Quat, v: &Vec3) -> Matrix4x3<f64> {
    // Returned transposed (4x3) so callers can take `.transpose()` into a 3x4 block.
    let r = Vec3::new(q.i, q.j, q.k);
    let w = q.w;
    let d_w = v * (2.0 * w) + r.cross(v) * 2.0;
    let d_r = -(v * r.transpose()) * 2.0
        + (r * v.transpose() + Mat3::identity() * r.dot(v)) * 2.0
        - skew(v) * (2.0 * w);
    let mut out = Matrix4x3::zeros();
    out.set_row(0, &d_w.transpose());
    for i in 0..3 {
        for j in 0..3 {
            // d_r[(row i of output, column j of r)] -> out[(1 + j, i)]
            out[(1 + j, i)] = d_r[(i, j)];
        }
    }
    out
}

/// Yaw angle (rotation about z) of a unit quaternion, ZYX convention.
pub fn quat_yaw(q: &Quat) -> f64 {
    atan2(
        2.0 * (q.w * q.k + q.i * q.j),
        1.0 - 2.0 * (q.j * q.j + q.k * q.k),
    )
}

/// Rotation angle between two attitudes, insensitive to quaternion sign.
pub fn quat_angle_between(a: &Quat, b: &Quat) -> f64 {
    let d = abs(quat_to_wxyz(a).dot(&quat_to_wxyz(b))).min(1.0);
    2.0 * acos(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skew_matches_cross() {
        let a = Vec3::new(0.3, -1.2, 2.0);
        let b = Vec3::new(-0.7, 0.4, 1.1);
        assert!((skew(&a) * b - a.cross(&b)).norm() < 1e-15);
    }

    #[test]
    fn quadratic_rotation_matches_sandwich_product() {
        let q = quat_from_axis_angle(&Vec3::new(1.0, 2.0, -0.5), 0.9);
        let v = Vec3::new(0.2, -0.4, 1.3);
        let pv = quat(0.0, v.x, v.y, v.z);
        let rotated = q * pv * q.conjugate();
        let m = quat_rotation_quadratic(&q) * v;
        assert!((m - Vec3::new(rotated.i, rotated.j, rotated.k)).norm() < 1e-14);
    }

    #[test]
    fn rotate_jacobian_matches_finite_difference() {
        let q = quat(0.8, -0.3, 0.4, 0.2);
        let v = Vec3::new(1.0, -2.0, 0.5);
        let jac = quat_rotate_jacobian(&q, &v).transpose();
        let h = 1e-6;
        for c in 0..4 {
            let mut qp = quat_to_wxyz(&q);
            let mut qm = quat_to_wxyz(&q);
            qp[c] += h;
            qm[c] -= h;
            let fp = quat_rotation_quadratic(&quat_from_wxyz(&qp)) * v;
            let fm = quat_rotation_quadratic(&quat_from_wxyz(&qm)) * v;
            let fd = (fp - fm) / (2.0 * h);
            for r in 0..3 {
                assert!((fd[r] - jac[(r, c)]).abs() < 1e-8, "row {r} col {c}");
            }
        }
    }

    #[test]
    fn yaw_of_z_rotation() {
        let q = quat_from_axis_angle(&Vec3::z(), 0.7);
        assert!((quat_yaw(&q) - 0.7).abs() < 1e-14);
        assert!(quat_angle_between(&q, &(-q)) < 1e-7);
    }
}
