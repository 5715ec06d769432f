//! Dense convex QP with box constraints, solved by projected Newton iterations.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct BoxQpResult {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// `‖x − clamp(x − ∇q(x))‖∞` at exit.
    pub projected_gradient: f64,
}

fn clamp(x: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        x.len(),
        x.iter()
            .zip(lo.iter().zip(hi.iter()))
            .map(|(v, (l, h))| v.clamp(*l, *h)),
    )
}

fn objective(h: &DMatrix<f64>, g: &DVector<f64>, x: &DVector<f64>) -> f64 {
    0.5 * x.dot(&(h * x)) + g.dot(x)
}

/// Minimizes `½ xᵀ H x + gᵀ x` subject to `lo ≤ x ≤ hi`.
///
/// `H` must be symmetric positive semi-definite; `regularization` is added to the diagonal
/// of each reduced Newton system (and escalated if a factorization fails).
pub fn solve_box_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    regularization: f64,
    max_iter: usize,
    tol: f64,
) -> BoxQpResult {
    let n = g.len();
    let mut x = clamp(&DVector::zeros(n), lo, hi);
    let mut iterations = 0;
    let mut pg_norm = f64::INFINITY;
    let eps_bound = 1e-12;

    while iterations < max_iter {
        let grad = h * &x + g;
        let pg = &x - clamp(&(&x - &grad), lo, hi);
        pg_norm = pg.amax();
        if pg_norm <= tol {
            break;
        }
        iterations += 1;

        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                let fixed = hi[i] - lo[i] <= eps_bound;
                let at_lo = x[i] <= lo[i] + eps_bound && grad[i] > 0.0;
                let at_hi = x[i] >= hi[i] - eps_bound && grad[i] < 0.0;
                !(fixed || at_lo || at_hi)
            })
            .collect();

        let mut dir = DVector::zeros(n);
        if !free.is_empty() {
            let m = free.len();
            let hff = DMatrix::from_fn(m, m, |r, c| h[(free[r], free[c])]);
            let gf = DVector::from_fn(m, |r, _| grad[free[r]]);
            let mut reg = regularization;
            let step = loop {
                let mut shifted = hff.clone();
                for i in 0..m {
                    shifted[(i, i)] += reg;
                }
                if let Some(chol) = shifted.cholesky() {
                    break Some(chol.solve(&(-&gf)));
                }
                reg = if reg > 0.0 { reg * 100.0 } else { 1e-10 };
                if reg > 1e6 {
                    break None;
                }
            };
            match step {
                Some(d) => {
                    for (k, &i) in free.iter().enumerate() {
                        dir[i] = d[k];
                    }
                }
                None => {
                    // Fall back to steepest descent on the free set.
                    for &i in &free {
                        dir[i] = -grad[i];
                    }
                }
            }
        } else {
            // Every variable is pinned with an outward gradient; x is optimal.
            break;
        }

        let f0 = objective(h, g, &x);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = clamp(&(&x + &dir * alpha), lo, hi);
            let f1 = objective(h, g, &cand);
            if f1 <= f0 + 1e-4 * grad.dot(&(&cand - &x)) {
                x = cand;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if iterations == max_iter {
        let grad = h * &x + g;
        pg_norm = (&x - clamp(&(&x - &grad), lo, hi)).amax();
    }
    BoxQpResult {
        x,
        iterations,
        projected_gradient: pg_norm,
    }
}
