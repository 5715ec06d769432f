//! Gauss–Newton SQP for the formation OCP.
//!
//! The shooting nodes are re-simulated from `x0` after every step, so each iterate is
//! dynamically feasible and the continuity constraints can be eliminated: the QP subproblem
//! is the condensed problem in the stacked inputs, with box bounds only.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Dyn, OMatrix, U13};

use crate::dynamics::{InputJacobian, InputVector, RigidBodyState, StateJacobian, StateVector, Wrench, INPUT_DIM};

use super::cost::{input_cost_derivatives, node_penalty, state_cost_derivatives};
use super::qp::solve_box_qp;
use super::{MeritRecord, NmpcError, OcpProblem, OcpSolution, SolveStatus, SolverSettings};

struct Evaluation {
    xs: Vec<StateVector>,
    cost: f64,
    penalty: f64,
    violation: f64,
}

struct Linearization {
    eval: Evaluation,
    a: Vec<StateJacobian>,
    b: Vec<InputJacobian>,
    /// Per-node state gradient and Gauss–Newton Hessian of cost + penalty, nodes `1..=N`.
    gx: Vec<StateVector>,
    hx: Vec<StateJacobian>,
}

impl OcpProblem {
    fn ref_vectors(&self) -> Vec<StateVector> {
        self.refs.iter().map(RigidBodyState::to_vector).collect()
    }

    fn stage_weights(&self, k: usize) -> &super::StateWeights {
        if k == self.horizon {
            &self.weights.terminal
        } else {
            &self.weights.stage
        }
    }

    fn evaluate(&self, us: &[InputVector], refs: &[StateVector], rho: f64) -> Evaluation {
        let mut xs = Vec::with_capacity(self.horizon + 1);
        let mut x = self.x0.to_vector();
        xs.push(x);
        for u in us {
            x = self.model.step(&x, u, self.dt);
            xs.push(x);
        }
        let (cost, penalty, violation) = self.score(&xs, us, refs, rho, None);
        Evaluation {
            xs,
            cost,
            penalty,
            violation,
        }
    }

    /// Tracking cost, penalty and worst violation of a trajectory; fills node derivatives if asked.
    fn score(
        &self,
        xs: &[StateVector],
        us: &[InputVector],
        refs: &[StateVector],
        rho: f64,
        mut derivs: Option<(&mut Vec<StateVector>, &mut Vec<StateJacobian>)>,
    ) -> (f64, f64, f64) {
        let mut cost = 0.0;
        let mut penalty = 0.0;
        let mut violation = 0.0f64;
        for (k, x) in xs.iter().enumerate() {
            let state = RigidBodyState::from_vector(x);
            if k < self.horizon {
                cost += super::stage_cost(&state, &Wrench::from_vector(&us[k]), &self.refs[k], &self.weights);
            } else {
                cost += super::terminal_cost(&state, &self.refs[k], &self.weights);
            }
            // The initial node is fixed; its terms do not depend on the inputs.
            let node_derivs = match derivs.as_mut() {
                Some((g, h)) if k > 0 => {
                    let (gk, hk) = (&mut g[k - 1], &mut h[k - 1]);
                    state_cost_derivatives(x, &refs[k], self.stage_weights(k), gk, hk);
                    Some((gk, hk))
                }
                _ => None,
            };
            let (p, v) = node_penalty(x, k, &self.obstacles, self.velocity_max.as_ref(), rho, node_derivs);
            if k > 0 {
                penalty += p;
                violation = violation.max(v);
            }
        }
        (cost, penalty, violation)
    }

    fn linearize(&self, us: &[InputVector], refs: &[StateVector], rho: f64) -> Linearization {
        let n = self.horizon;
        let mut xs = Vec::with_capacity(n + 1);
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut x = self.x0.to_vector();
        xs.push(x);
        for u in us {
            let (next, ak, bk) = self.model.step_with_sensitivity(&x, u, self.dt);
            a.push(ak);
            b.push(bk);
            x = next;
            xs.push(x);
        }
        let mut gx = vec![StateVector::zeros(); n];
        let mut hx = vec![StateJacobian::zeros(); n];
        let (cost, penalty, violation) = self.score(&xs, us, refs, rho, Some((&mut gx, &mut hx)));
        Linearization {
            eval: Evaluation {
                xs,
                cost,
                penalty,
                violation,
            },
            a,
            b,
            gx,
            hx,
        }
    }

    /// Reduced gradient of the merit with respect to the stacked inputs (adjoint sweep).
    fn reduced_gradient(&self, lin: &Linearization, us: &[InputVector]) -> DVector<f64> {
        let n = self.horizon;
        let mut grad = DVector::zeros(INPUT_DIM * n);
        let mut lambda = StateVector::zeros();
        for k in (0..n).rev() {
            // lambda = d(merit)/d(x_{k+1}) including all downstream terms.
            lambda = lin.gx[k] + if k + 1 < n { lin.a[k + 1].tr_mul(&lambda) } else { StateVector::zeros() };
            let (gu, _) = input_cost_derivatives(&us[k], &self.weights);
            let gk = gu + lin.b[k].tr_mul(&lambda);
            grad.rows_mut(INPUT_DIM * k, INPUT_DIM).copy_from(&gk);
        }
        grad
    }

    /// Condensed Gauss–Newton Hessian `Σ_k G_kᵀ H_k G_k + blockdiag(2R)`.
    fn condensed_hessian(&self, lin: &Linearization, us: &[InputVector]) -> DMatrix<f64> {
        let n = self.horizon;
        let nu = INPUT_DIM * n;
        let mut h = DMatrix::zeros(nu, nu);
        let (_, hu) = input_cost_derivatives(&us[0], &self.weights);
        for k in 0..n {
            h.view_mut((INPUT_DIM * k, INPUT_DIM * k), (INPUT_DIM, INPUT_DIM))
                .copy_from(&hu);
        }
        // Sensitivity of x_{k+1} to every input; only the first 6(k+1) columns are non-zero.
        let mut g: OMatrix<f64, U13, Dyn> = OMatrix::zeros_generic(U13, Dyn(nu));
        for k in 0..n {
            let m = INPUT_DIM * k;
            if m > 0 {
                let prev = g.columns(0, m).into_owned();
                g.columns_mut(0, m).copy_from(&(lin.a[k] * prev));
            }
            g.columns_mut(m, INPUT_DIM).copy_from(&lin.b[k]);
            let cols = m + INPUT_DIM;
            let gv = g.columns(0, cols);
            let t = lin.hx[k] * gv;
            h.view_mut((0, 0), (cols, cols)).gemm_tr(1.0, &gv, &t, 1.0);
        }
        h
    }

    /// States obtained by applying `u_seq` from `x0`.
    pub fn rollout(&self, u_seq: &[Wrench]) -> Vec<RigidBodyState> {
        let us: Vec<InputVector> = u_seq.iter().map(Wrench::to_vector).collect();
        self.evaluate(&us, &self.ref_vectors(), 0.0)
            .xs
            .iter()
            .map(RigidBodyState::from_vector)
            .collect()
    }

    /// Tracking cost plus exterior penalty at weight `rho`.
    pub fn merit(&self, u_seq: &[Wrench], rho: f64) -> f64 {
        let us: Vec<InputVector> = u_seq.iter().map(Wrench::to_vector).collect();
        let e = self.evaluate(&us, &self.ref_vectors(), rho);
        e.cost + e.penalty
    }

    /// Exact gradient of [`OcpProblem::merit`] with respect to the stacked inputs.
    pub fn merit_gradient(&self, u_seq: &[Wrench], rho: f64) -> Vec<f64> {
        let us: Vec<InputVector> = u_seq.iter().map(Wrench::to_vector).collect();
        let lin = self.linearize(&us, &self.ref_vectors(), rho);
        self.reduced_gradient(&lin, &us).iter().copied().collect()
    }
}

fn stack(us: &[InputVector]) -> DVector<f64> {
    DVector::from_iterator(us.len() * INPUT_DIM, us.iter().flat_map(|u| u.iter().copied()))
}

fn unstack(v: &DVector<f64>) -> Vec<InputVector> {
    v.as_slice()
        .chunks(INPUT_DIM)
        .map(InputVector::from_column_slice)
        .collect()
}

fn projected_gradient(u: &DVector<f64>, grad: &DVector<f64>, hi: &DVector<f64>) -> f64 {
    u.iter()
        .zip(grad.iter())
        .zip(hi.iter())
        .map(|((&x, &g), &b)| (x - (x - g).clamp(-b, b)).abs())
        .fold(0.0, f64::max)
}

fn initial_guess(problem: &OcpProblem, warm_start: Option<&OcpSolution>) -> Vec<InputVector> {
    let n = problem.horizon;
    let mut us: Vec<InputVector> = match warm_start {
        Some(w) if !w.u_seq.is_empty() => w.u_seq.iter().take(n).map(|u| problem.input_bounds.clamp(u).to_vector()).collect(),
        _ => Vec::new(),
    };
    let last = us.last().copied().unwrap_or_else(InputVector::zeros);
    us.resize(n, last);
    us
}

/// Solves the OCP with default solver settings.
pub fn solve_ocp(problem: &OcpProblem, warm_start: Option<&OcpSolution>) -> Result<OcpSolution, NmpcError> {
    solve_ocp_with(problem, warm_start, &SolverSettings::default())
}

pub fn solve_ocp_with(
    problem: &OcpProblem,
    warm_start: Option<&OcpSolution>,
    settings: &SolverSettings,
) -> Result<OcpSolution, NmpcError> {
    problem.validate()?;
    let n = problem.horizon;
    let refs = problem.ref_vectors();
    let upper = problem.input_bounds.upper();
    let hi = DVector::from_fn(INPUT_DIM * n, |i, _| upper[i % INPUT_DIM]);
    let lo = -&hi;

    let mut us = initial_guess(problem, warm_start);
    let mut rho = settings.penalty_init;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut kkt;

    loop {
        let lin = problem.linearize(&us, &refs, rho);
        let grad = problem.reduced_gradient(&lin, &us);
        let u = stack(&us);
        kkt = projected_gradient(&u, &grad, &hi);
        let penalty_settled = lin.eval.violation <= settings.violation_tol || rho >= settings.penalty_cap;
        if kkt < settings.kkt_tol && penalty_settled {
            converged = true;
            break;
        }
        if iterations >= settings.max_iter {
            break;
        }
        iterations += 1;

        let h = problem.condensed_hessian(&lin, &us);
        let qp = solve_box_qp(&h, &grad, &(&lo - &u), &(&hi - &u), settings.regularization, 100, 1e-10);
        let du = qp.x;
        let slope = grad.dot(&du);
        let merit0 = lin.eval.cost + lin.eval.penalty;

        let mut accepted = None;
        if slope < 0.0 {
            let mut alpha = 1.0;
            for _ in 0..30 {
                let cand = unstack(&(&u + &du * alpha).zip_zip_map(&lo, &hi, |x, l, h| x.clamp(l, h)));
                let e = problem.evaluate(&cand, &refs, rho);
                let merit1 = e.cost + e.penalty;
                if merit1 <= merit0 + 1e-4 * alpha * slope {
                    accepted = Some((cand, merit1, e.violation));
                    break;
                }
                alpha *= 0.5;
            }
        }

        match accepted {
            Some((cand, merit1, violation)) => {
                history.push(MeritRecord {
                    penalty_weight: rho,
                    before: merit0,
                    after: merit1,
                });
                us = cand;
                if violation > settings.violation_tol && rho < settings.penalty_cap {
                    rho = (rho * 2.0).min(settings.penalty_cap);
                }
            }
            None => {
                // No descent at this weight: tighten the penalty if it still matters, else stop.
                if lin.eval.violation > settings.violation_tol && rho < settings.penalty_cap {
                    rho = (rho * 2.0).min(settings.penalty_cap);
                } else {
                    break;
                }
            }
        }
    }

    let eval = problem.evaluate(&us, &refs, rho);
    let status = if converged {
        SolveStatus::Converged
    } else if eval.violation > settings.infeasible_tol {
        SolveStatus::Infeasible
    } else {
        SolveStatus::MaxIter
    };
    Ok(OcpSolution {
        u_seq: us.iter().map(Wrench::from_vector).collect(),
        x_pred: eval.xs.iter().map(RigidBodyState::from_vector).collect(),
        cost: eval.cost,
        kkt_residual: kkt,
        iterations,
        status,
        penalty_weight: rho,
        max_violation: eval.violation,
        merit_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{cw_stm, step_rk4, BodyParams, OrbitParams, RigidBodyModel};
    use crate::math::{quat_from_axis_angle, Mat3, Vec3};
    use crate::nmpc::{InputBounds, Obstacle, OcpWeights};
    use alloc::string::String;
    use nalgebra::{Matrix3, Matrix6, SMatrix};
    use rand::{Rng, SeedableRng};

    fn model() -> RigidBodyModel {
        RigidBodyModel::new(
            OrbitParams::earth(6_778_000.0).unwrap(),
            BodyParams::new(17.8, Mat3::identity() * 0.315).unwrap(),
        )
    }

    fn problem(x0: RigidBodyState, r: RigidBodyState, horizon: usize) -> OcpProblem {
        OcpProblem {
            x0,
            refs: vec![r; horizon + 1],
            weights: OcpWeights::formation_default(),
            horizon,
            dt: 0.2,
            model: model(),
            input_bounds: InputBounds::symmetric(3.0, 0.51),
            velocity_max: None,
            obstacles: Vec::new(),
        }
    }

    fn assert_feasible(p: &OcpProblem, s: &OcpSolution) {
        assert_eq!(s.x_pred.len(), p.horizon + 1);
        assert_eq!(s.x_pred[0], p.x0);
        for k in 0..p.horizon {
            let next = step_rk4(&s.x_pred[k], &s.u_seq[k], &p.model, p.dt).unwrap();
            let err = (next.to_vector() - s.x_pred[k + 1].to_vector()).amax();
            assert!(err <= 1e-8, "step {k}: {err}");
            assert!(p.input_bounds.contains(&s.u_seq[k], 0.0));
        }
        for m in &s.merit_history {
            assert!(m.after <= m.before, "{m:?}");
        }
    }

    #[test]
    fn origin_is_an_equilibrium() {
        let p = problem(RigidBodyState::default(), RigidBodyState::default(), 30);
        let s = solve_ocp(&p, None).unwrap();
        assert_eq!(s.status, SolveStatus::Converged);
        for u in &s.u_seq {
            assert!(u.to_vector().amax() < 1e-6);
        }
        assert_feasible(&p, &s);
    }

    #[test]
    fn single_step_matches_least_squares() {
        // Torque pinned to zero keeps the attitude fixed, so the step is affine in the force.
        // Oracle: zero-order-hold discretization of the CW system via the matrix exponential.
        let x0 = RigidBodyState {
            p_h: Vec3::new(0.2, -0.1, 0.05),
            v_h: Vec3::new(0.01, 0.02, -0.01),
            ..Default::default()
        };
        let mut p = problem(x0, RigidBodyState::default(), 1);
        p.input_bounds = InputBounds {
            force_max: Vec3::repeat(3.0),
            torque_max: Vec3::zeros(),
        };
        let s = solve_ocp(&p, None).unwrap();

        let n = p.model.orbit.n;
        let m = p.model.body.mass;
        let mut a = SMatrix::<f64, 9, 9>::zeros();
        a.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
        a[(3, 0)] = 3.0 * n * n;
        a[(3, 4)] = 2.0 * n;
        a[(4, 3)] = -2.0 * n;
        a[(5, 2)] = -n * n;
        a.fixed_view_mut::<3, 3>(3, 6).copy_from(&(Matrix3::identity() / m));
        let mut e = SMatrix::<f64, 9, 9>::identity();
        let mut term = e;
        for k in 1..25 {
            term = term * (a * p.dt) / k as f64;
            e += term;
        }
        let phi: Matrix6<f64> = e.fixed_view::<6, 6>(0, 0).into_owned();
        let gamma = e.fixed_view::<6, 3>(0, 6).into_owned();
        assert!((phi - cw_stm(n, p.dt)).amax() < 1e-12);

        let w = &p.weights;
        let mut pt = Matrix6::zeros();
        pt.fixed_view_mut::<3, 3>(0, 0).copy_from(&w.terminal.p);
        pt.fixed_view_mut::<3, 3>(3, 3).copy_from(&w.terminal.v);
        let rf = w.r.fixed_view::<3, 3>(0, 0).into_owned();
        let z0 = nalgebra::Vector6::new(x0.p_h.x, x0.p_h.y, x0.p_h.z, x0.v_h.x, x0.v_h.y, x0.v_h.z);
        let lhs = gamma.transpose() * pt * gamma + rf;
        let f = -lhs.lu().solve(&(gamma.transpose() * pt * phi * z0)).unwrap();
        assert!(f.amax() < 3.0, "bounds must be inactive: {f}");
        let got = s.u_seq[0].force_b;
        assert!((got - f).norm() <= 1e-6 * f.norm(), "{got} vs {f}");
        assert_feasible(&p, &s);
    }

    #[test]
    fn static_obstacle_is_avoided() {
        let x0 = RigidBodyState::at_position(Vec3::new(-1.0, 0.05, 0.0));
        let goal = RigidBodyState::at_position(Vec3::new(1.0, 0.0, 0.0));
        let mut p = problem(x0, goal, 30);
        p.obstacles.push(Obstacle {
            agent_id: String::from("b"),
            positions: vec![Vec3::zeros(); 31],
            d_min: 0.5,
        });
        let s = solve_ocp(&p, None).unwrap();
        assert_ne!(s.status, SolveStatus::Infeasible);
        let positions: Vec<Vec3> = s.x_pred.iter().map(|x| x.p_h).collect();
        let worst = crate::nmpc::collision_residuals(&positions, &p.obstacles)
            .iter()
            .map(|r| r[0])
            .fold(f64::INFINITY, f64::min);
        assert!(worst >= -0.05, "min residual {worst}");
        let end = s.x_pred.last().unwrap().p_h;
        assert!((end - goal.p_h).norm() < (x0.p_h - goal.p_h).norm() - 0.25);
        assert_feasible(&p, &s);
    }

    fn random_state(rng: &mut impl Rng) -> RigidBodyState {
        let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.1..1.0));
        RigidBodyState {
            p_h: Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0)),
            v_h: Vec3::from_fn(|_, _| rng.gen_range(-0.1..0.1)),
            q_hb: quat_from_axis_angle(&axis, rng.gen_range(-3.0..3.0)),
            omega_b: Vec3::from_fn(|_, _| rng.gen_range(-0.2..0.2)),
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for trial in 0..100 {
            let horizon = rng.gen_range(1..6);
            let mut p = problem(random_state(&mut rng), random_state(&mut rng), horizon);
            p.refs = (0..=horizon).map(|_| random_state(&mut rng)).collect();
            p.velocity_max = Some(Vec3::repeat(0.05));
            p.obstacles.push(Obstacle {
                agent_id: String::from("b"),
                positions: (0..=horizon).map(|k| p.x0.p_h + Vec3::new(0.1 * k as f64, 0.2, 0.0)).collect(),
                d_min: 0.5,
            });
            let u: Vec<Wrench> = (0..horizon)
                .map(|_| {
                    Wrench::from_vector(&InputVector::from_fn(|i, _| {
                        let b = if i < 3 { 3.0 } else { 0.51 };
                        rng.gen_range(-b..b)
                    }))
                })
                .collect();
            let rho = 1e3;
            let g = p.merit_gradient(&u, rho);
            let eps = 1e-6;
            let mut fd = Vec::with_capacity(g.len());
            for i in 0..g.len() {
                let mut up = u.clone();
                let mut um = u.clone();
                let (k, j) = (i / INPUT_DIM, i % INPUT_DIM);
                let mut v = up[k].to_vector();
                v[j] += eps;
                up[k] = Wrench::from_vector(&v);
                let mut v = um[k].to_vector();
                v[j] -= eps;
                um[k] = Wrench::from_vector(&v);
                fd.push((p.merit(&up, rho) - p.merit(&um, rho)) / (2.0 * eps));
            }
            let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let scale: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
            assert!(diff <= 1e-5 * scale, "trial {trial}: {diff} vs {scale}");
        }
    }

    #[test]
    fn reference_sign_does_not_matter() {
        let x0 = RigidBodyState {
            p_h: Vec3::new(0.3, 0.2, 0.0),
            q_hb: quat_from_axis_angle(&Vec3::z(), 0.4),
            ..Default::default()
        };
        let r = RigidBodyState {
            q_hb: quat_from_axis_angle(&Vec3::new(0.0, 0.3, 1.0), -0.2),
            ..Default::default()
        };
        let flipped = RigidBodyState { q_hb: -r.q_hb, ..r };
        let a = solve_ocp(&problem(x0, r, 10), None).unwrap();
        let b = solve_ocp(&problem(x0, flipped, 10), None).unwrap();
        for (ua, ub) in a.u_seq.iter().zip(&b.u_seq) {
            assert!((ua.to_vector() - ub.to_vector()).amax() < 1e-6);
        }
    }

    #[test]
    fn warm_start_and_monotone_merit() {
        let x0 = RigidBodyState {
            p_h: Vec3::new(1.0, 1.0, 0.0),
            q_hb: quat_from_axis_angle(&Vec3::z(), 0.3),
            ..Default::default()
        };
        let p = problem(x0, RigidBodyState::default(), 30);
        let cold = solve_ocp(&p, None).unwrap();
        assert_feasible(&p, &cold);
        assert!(!cold.merit_history.is_empty());
        let warm = solve_ocp(&p, Some(&cold)).unwrap();
        assert!(warm.iterations <= 1, "{}", warm.iterations);
        assert!((warm.cost - cold.cost).abs() <= 1e-6 * cold.cost);
    }

    #[test]
    fn invalid_problems_are_rejected() {
        let mut p = problem(RigidBodyState::default(), RigidBodyState::default(), 3);
        p.refs.pop();
        assert!(matches!(solve_ocp(&p, None), Err(NmpcError::ReferenceLength { .. })));
        let mut p = problem(RigidBodyState::default(), RigidBodyState::default(), 3);
        p.refs[2].q_hb = p.refs[2].q_hb * 2.0;
        assert_eq!(solve_ocp(&p, None), Err(NmpcError::NonUnitQuaternion(2)));
    }
}
