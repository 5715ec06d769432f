//! Thruster layouts and wrench allocation.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dynamics::Wrench;
use crate::math::Vec3;

/// Lever arm of the reference layouts, metres.
pub const LEVER_ARM: f64 = 0.17;
/// Nominal thrust of one unit, newtons.
pub const NOMINAL_THRUST: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayoutError {
    #[error("thruster {0} direction is not unit-norm")]
    Direction(usize),
    #[error("thruster {0} max thrust must be positive")]
    MaxThrust(usize),
    #[error("layout has no thrusters")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thruster {
    pub position: Vec3,
    pub direction: Vec3,
    pub max_thrust: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThrusterLayout {
    thrusters: Vec<Thruster>,
    /// 6 × m: column `i` is the body wrench of thruster `i` at unit thrust.
    matrix: DMatrix<f64>,
}

impl ThrusterLayout {
    pub fn new(thrusters: Vec<Thruster>) -> Result<Self, LayoutError> {
        if thrusters.is_empty() {
            return Err(LayoutError::Empty);
        }
        for (i, t) in thrusters.iter().enumerate() {
            if (t.direction.norm() - 1.0).abs() > 1e-9 {
                return Err(LayoutError::Direction(i));
            }
            if !(t.max_thrust > 0.0) {
                return Err(LayoutError::MaxThrust(i));
            }
        }
        let matrix = DMatrix::from_fn(6, thrusters.len(), |r, c| {
            let t = &thrusters[c];
            if r < 3 {
                t.direction[r]
            } else {
                t.position.cross(&t.direction)[r - 3]
            }
        });
        Ok(Self { thrusters, matrix })
    }

    /// Twelve units in opposing pairs: x thrusters offset along ±y (yaw), y thrusters along
    /// ±z (roll), z thrusters along ±x (pitch).
    pub fn symmetric12() -> Self {
        let d = LEVER_ARM;
        let mut ts = Vec::with_capacity(12);
        let axes = [
            (Vec3::x(), Vec3::y()),
            (Vec3::y(), Vec3::z()),
            (Vec3::z(), Vec3::x()),
        ];
        for (dir, arm) in axes {
            for sign in [1.0, -1.0] {
                for side in [1.0, -1.0] {
                    ts.push(Thruster {
                        position: arm * (side * d),
                        direction: dir * sign,
                        max_thrust: NOMINAL_THRUST,
                    });
                }
            }
        }
        Self::new(ts).expect("reference layout is valid")
    }

    /// Eight units in the body x–y plane: x thrusters offset along ±y, y thrusters along ±x.
    pub fn planar8() -> Self {
        let d = LEVER_ARM;
        let mut ts = Vec::with_capacity(8);
        for (dir, arm) in [(Vec3::x(), Vec3::y()), (Vec3::y(), Vec3::x())] {
            for sign in [1.0, -1.0] {
                for side in [1.0, -1.0] {
                    ts.push(Thruster {
                        position: arm * (side * d),
                        direction: dir * sign,
                        max_thrust: NOMINAL_THRUST,
                    });
                }
            }
        }
        Self::new(ts).expect("reference layout is valid")
    }

    pub fn thrusters(&self) -> &[Thruster] {
        &self.thrusters
    }

    pub fn len(&self) -> usize {
        self.thrusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thrusters.is_empty()
    }

    pub fn wrench_matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rank(&self) -> usize {
        self.matrix.clone().svd(false, false).rank(1e-9)
    }

    pub fn max_thrusts(&self) -> Vec<f64> {
        self.thrusters.iter().map(|t| t.max_thrust).collect()
    }

    /// Body wrench produced by the given thrust levels.
    pub fn wrench(&self, thrust: &[f64]) -> Wrench {
        let w = &self.matrix * DVector::from_column_slice(thrust);
        Wrench::new(Vec3::new(w[0], w[1], w[2]), Vec3::new(w[3], w[4], w[5]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub thrust: Vec<f64>,
    pub achieved: Wrench,
    /// `‖B t − w‖₂`.
    pub residual: f64,
    /// Part of the command lies outside the layout's range space.
    pub out_of_range: bool,
}

/// Tikhonov weight that makes the bounded problem strictly convex; it selects the smallest
/// thrust vector among the exact solutions and perturbs the residual far below 1e-9.
const TIKHONOV: f64 = 1e-12;

/// Bounded least-squares `min ‖A x − b‖` over `lo ≤ x ≤ hi` by active-set iteration.
/// `A` must have full column rank.
fn bvls(a: &DMatrix<f64>, b: &DVector<f64>, lo: &[f64], hi: &[f64]) -> DVector<f64> {
    #[derive(Clone, Copy, PartialEq)]
    enum Set {
        Lower,
        Upper,
        Free,
    }
    let n = a.ncols();
    let mut x = DVector::from_column_slice(lo);
    let mut set = alloc::vec![Set::Lower; n];
    for i in 0..n {
        if hi[i] <= lo[i] {
            x[i] = lo[i];
        }
    }
    let tol = 1e-13 * (1.0 + b.amax());

    for _ in 0..(4 * n + 10) {
        let g = a.tr_mul(&(b - a * &x));
        let candidate = (0..n)
            .filter(|&i| hi[i] > lo[i])
            .filter_map(|i| match set[i] {
                Set::Lower if g[i] > tol => Some((i, g[i])),
                Set::Upper if g[i] < -tol => Some((i, -g[i])),
                _ => None,
            })
            .max_by(|p, q| p.1.total_cmp(&q.1));
        let Some((j, _)) = candidate else { break };
        set[j] = Set::Free;

        for _ in 0..(2 * n + 2) {
            let free: Vec<usize> = (0..n).filter(|&i| set[i] == Set::Free).collect();
            if free.is_empty() {
                break;
            }
            let mut rhs = b.clone();
            for i in (0..n).filter(|&i| set[i] != Set::Free) {
                rhs -= a.column(i) * x[i];
            }
            let af = a.select_columns(free.iter());
            let z = af
                .svd(true, true)
                .solve(&rhs, 1e-15)
                .expect("SVD computed with both factors");
            let inside = free
                .iter()
                .enumerate()
                .all(|(k, &i)| z[k] > lo[i] && z[k] < hi[i]);
            if inside {
                for (k, &i) in free.iter().enumerate() {
                    x[i] = z[k];
                }
                break;
            }
            // Step towards z until the first free variable reaches a bound.
            let mut alpha = 1.0f64;
            for (k, &i) in free.iter().enumerate() {
                let d = z[k] - x[i];
                if z[k] <= lo[i] && d < 0.0 {
                    alpha = alpha.min((lo[i] - x[i]) / d);
                } else if z[k] >= hi[i] && d > 0.0 {
                    alpha = alpha.min((hi[i] - x[i]) / d);
                }
            }
            let alpha = alpha.max(0.0);
            for (k, &i) in free.iter().enumerate() {
                x[i] += alpha * (z[k] - x[i]);
                let eps = 1e-14 * (1.0 + hi[i].abs());
                if x[i] <= lo[i] + eps {
                    x[i] = lo[i];
                    set[i] = Set::Lower;
                } else if x[i] >= hi[i] - eps {
                    x[i] = hi[i];
                    set[i] = Set::Upper;
                }
            }
        }
    }
    x
}

/// Maps a commanded body wrench to thrust levels `0 ≤ t ≤ t_max` minimizing `‖B t − w‖`.
pub fn allocate(command: &Wrench, layout: &ThrusterLayout) -> Allocation {
    let b = layout.wrench_matrix();
    let m = layout.len();
    let w = command.to_vector();
    let w = DVector::from_column_slice(w.as_slice());

    let mut aug = DMatrix::zeros(6 + m, m);
    aug.view_mut((0, 0), (6, m)).copy_from(b);
    for i in 0..m {
        aug[(6 + i, i)] = crate::math::sqrt(TIKHONOV);
    }
    let mut rhs = DVector::zeros(6 + m);
    rhs.rows_mut(0, 6).copy_from(&w);

    let lo = alloc::vec![0.0; m];
    let t = bvls(&aug, &rhs, &lo, &layout.max_thrusts());
    let thrust: Vec<f64> = t.iter().copied().collect();
    let achieved = layout.wrench(&thrust);
    let residual = (achieved.to_vector() - command.to_vector()).norm();

    let svd = b.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-9).count();
    let ur = u.columns(0, rank);
    let out_of_range = (&w - &ur * ur.tr_mul(&w)).norm() > 1e-9 * (1.0 + w.norm());

    Allocation {
        thrust,
        achieved,
        residual,
        out_of_range,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Projected-gradient descent on `½‖Bt − w‖²` over the box, as an independent oracle.
    pub(crate) fn projected_gradient_nnls(b: &DMatrix<f64>, w: &DVector<f64>, hi: &[f64]) -> DVector<f64> {
        let lip = b.tr_mul(b).symmetric_eigenvalues().amax();
        let step = 1.0 / lip;
        let mut t = DVector::zeros(b.ncols());
        let mut y = t.clone();
        let mut k = 1.0f64;
        for _ in 0..200_000 {
            let g = b.tr_mul(&(b * &y - w));
            let next = (&y - g * step).zip_map(&DVector::from_column_slice(hi), |v, h| v.clamp(0.0, h));
            let k_next = (1.0 + (1.0 + 4.0 * k * k).sqrt()) / 2.0;
            y = &next + (&next - &t) * ((k - 1.0) / k_next);
            t = next;
            k = k_next;
        }
        t
    }

    #[test]
    fn layout_ranks() {
        assert_eq!(ThrusterLayout::symmetric12().rank(), 6);
        assert_eq!(ThrusterLayout::planar8().rank(), 3);
        let bad = Thruster {
            position: Vec3::zeros(),
            direction: Vec3::new(1.0, 1.0, 0.0),
            max_thrust: 1.0,
        };
        assert_eq!(ThrusterLayout::new(alloc::vec![bad]), Err(LayoutError::Direction(0)));
    }

    #[test]
    fn zero_command_gives_zero_thrust() {
        let a = allocate(&Wrench::zero(), &ThrusterLayout::symmetric12());
        assert!(a.thrust.iter().all(|&t| t == 0.0));
        assert!(!a.out_of_range);
    }

    #[test]
    fn full_axis_force() {
        let cmd = Wrench::new(Vec3::new(3.0, 0.0, 0.0), Vec3::zeros());
        let a = allocate(&cmd, &ThrusterLayout::symmetric12());
        assert!(a.residual <= 1e-9, "{}", a.residual);
        assert!(a.thrust.iter().all(|&t| (0.0..=1.5).contains(&t)));
    }

    #[test]
    fn planar_pure_yaw_torque() {
        let cmd = Wrench::new(Vec3::zeros(), Vec3::new(0.0, 0.0, 0.51));
        let a = allocate(&cmd, &ThrusterLayout::planar8());
        assert!((a.achieved.torque_b.z - 0.51).abs() <= 1e-9);
        assert!(a.achieved.force_b.norm() <= 1e-9);
        assert!(!a.out_of_range);

        let roll = Wrench::new(Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0));
        assert!(allocate(&roll, &ThrusterLayout::planar8()).out_of_range);
    }

    #[test]
    fn saturated_commands_match_oracle() {
        let layout = ThrusterLayout::symmetric12();
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        for _ in 0..20 {
            let cmd = Wrench::new(
                Vec3::from_fn(|_, _| rng.gen_range(-8.0..8.0)),
                Vec3::from_fn(|_, _| rng.gen_range(-1.5..1.5)),
            );
            let a = allocate(&cmd, &layout);
            let w = DVector::from_column_slice(cmd.to_vector().as_slice());
            let oracle = projected_gradient_nnls(layout.wrench_matrix(), &w, &layout.max_thrusts());
            let oracle_res = (layout.wrench_matrix() * oracle - &w).norm();
            assert!((a.residual - oracle_res).abs() <= 1e-6, "{} vs {}", a.residual, oracle_res);
        }
    }
}
