//! BFGS on the inverse Hessian with Armijo backtracking.
//!
//! The inverse Hessian is seeded from a problem-supplied curvature model
//! (for GMM, the Gauss-Newton matrix `2 J' Omega J`) and re-seeded whenever a
//! line search fails or the quasi-Newton direction stops being a descent
//! direction.
//!
//! Besides the gradient and value tolerances, a point counts as stationary
//! when the decrease predicted along a freshly seeded direction is below the
//! floating-point resolution of the objective. Over-identified systems stop
//! there: their objective stays positive and the gradient cannot be pushed
//! below an absolute tolerance once steps no longer change `f`.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

pub(crate) trait Problem {
    fn value_grad(&mut self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)>;
    /// Symmetric positive semi-definite curvature approximation at `x`.
    fn curvature(&mut self, x: &DVector<f64>) -> Result<DMatrix<f64>>;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub value_tol: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct BfgsOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub resets: usize,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;
/// Predicted decrease, relative to `|f|`, below which no step can register.
const RESOLUTION: f64 = 1024.0 * f64::EPSILON;

pub(crate) fn minimize<P: Problem>(problem: &mut P, x0: DVector<f64>, opts: &BfgsOptions) -> Result<BfgsOutcome> {
    let n = x0.len();
    let mut x = x0;
    let (mut f, mut g) = problem.value_grad(&x)?;
    let mut h = inverse_curvature(problem, &x)?;
    let mut resets = 0;
    let mut just_reset = true;
    let mut iterations = 0;
    let mut resolved = false;

    let done = |f: f64, g: &DVector<f64>| f < opts.value_tol || g.amax() < opts.grad_tol;

    while iterations < opts.max_iter && f.is_finite() && !done(f, &g) {
        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if just_reset && slope <= 0.0 && -slope <= RESOLUTION * f.abs() {
            resolved = true;
            break;
        }
        iterations += 1;
        if !(slope < 0.0) {
            h = inverse_curvature(problem, &x)?;
            resets += 1;
            d = -(&h * &g);
            slope = g.dot(&d);
            if !(slope < 0.0) {
                d = -g.clone();
                slope = g.dot(&d);
            }
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let trial = &x + &d * step;
            let (ft, gt) = problem.value_grad(&trial)?;
            if ft.is_finite() && ft <= f + ARMIJO * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            if just_reset {
                break;
            }
            h = inverse_curvature(problem, &x)?;
            resets += 1;
            just_reset = true;
            continue;
        };
        just_reset = false;

        let s = &x_new - &x;
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() && sy > 0.0 {
            let rho = 1.0 / sy;
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            // H <- (I - rho s y') H (I - rho y s') + rho s s'
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        let stalled = (f - f_new).abs() <= 1e-16 * f.abs().max(1e-300) && n > 0;
        x = x_new;
        f = f_new;
        g = g_new;
        if stalled {
            h = inverse_curvature(problem, &x)?;
            resets += 1;
            just_reset = true;
        }
    }

    let grad_norm = g.amax();
    Ok(BfgsOutcome {
        converged: f.is_finite() && (resolved || done(f, &g)),
        x,
        value: f,
        grad_norm,
        iterations,
        resets,
    })
}

/// `(C + mu I)^{-1}`, increasing `mu` until `C + mu I` factors.
fn inverse_curvature<P: Problem>(problem: &mut P, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let c = problem.curvature(x)?;
    let n = c.nrows();
    let scale = (0..n).map(|i| c[(i, i)].abs()).fold(0.0, f64::max).max(1e-12);
    let mut mu = 1e-10 * scale;
    for _ in 0..30 {
        let mut a = c.clone();
        for i in 0..n {
            a[(i, i)] += mu;
        }
        if let Some(chol) = a.cholesky() {
            return Ok(chol.inverse());
        }
        mu *= 10.0;
    }
    Ok(DMatrix::identity(n, n) / scale)
}
