//! Starting values: OLS for the outcome bridge and an intercept-adjusted
//! logistic regression of the post-period indicator for the treatment bridge.

use nalgebra::{DMatrix, DVector};

use crate::bridges::{OutcomeBridgeParams, TreatmentBridgeParams, ETA_CLAMP};
use crate::error::{Error, Result};
use crate::panel::PanelData;

const OLS_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct OlsInit {
    pub params: OutcomeBridgeParams,
    /// The pre-period design was singular and a ridge penalty was added.
    pub ridge_used: bool,
}

/// OLS of `Y` on `(1, W)` over the pre-treatment periods.
pub fn init_h_ols(panel: &PanelData) -> Result<OlsInit> {
    init_h_ols_on(panel, &(0..panel.dw()).collect::<Vec<_>>())
}

pub fn init_h_ols_on(panel: &PanelData, columns: &[usize]) -> Result<OlsInit> {
    let p = columns.len() + 1;
    let n = panel.t0();
    if n <= p {
        return Err(Error::Validation(format!(
            "outcome-bridge OLS needs more than {p} pre-treatment periods, have {n}"
        )));
    }
    let x = DMatrix::from_fn(n, p, |t, j| if j == 0 { 1.0 } else { panel.w_row(t)[columns[j - 1]] });
    let y = DVector::from_column_slice(&panel.y()[..n]);

    let qr = x.clone().qr();
    let r = qr.r();
    let max_diag = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let singular = max_diag == 0.0 || (0..p).any(|i| r[(i, i)].abs() <= 1e-10 * max_diag);
    let coef = if singular {
        let mut xtx = x.transpose() * &x;
        for i in 0..p {
            xtx[(i, i)] += OLS_RIDGE;
        }
        xtx.cholesky()
            .ok_or_else(|| Error::Numerical("ridge-regularized OLS failed".into()))?
            .solve(&(x.transpose() * &y))
    } else {
        let qty = qr.q().transpose() * &y;
        r.solve_upper_triangular(&qty)
            .ok_or_else(|| Error::Numerical("OLS triangular solve failed".into()))?
    };
    Ok(OlsInit {
        params: OutcomeBridgeParams::on_columns(coef.iter().copied().collect(), columns.to_vec())?,
        ridge_used: singular,
    })
}

#[derive(Debug, Clone)]
pub struct LogisticInit {
    pub params: TreatmentBridgeParams,
    pub converged: bool,
    /// Fitted predictors reached the clamp bound (perfect or quasi separation).
    pub separated: bool,
    pub iterations: usize,
    /// Rows used (periods with fully observed proxies).
    pub rows_used: usize,
}

/// Logistic regression of `1(t > T0)` on `(1, Z_S)` over every period with
/// observed proxies; the intercept is shifted by `-ln(n_post / n_pre)`.
pub fn init_q_logistic(panel: &PanelData, columns: &[usize]) -> Result<LogisticInit> {
    let p = columns.len() + 1;
    let rows: Vec<usize> = (0..panel.n_periods())
        .filter(|&t| columns.iter().all(|&c| !panel.z_row(t)[c].is_nan()))
        .collect();
    let n_post = rows.iter().filter(|&&t| !panel.is_pre(t)).count();
    let n_pre = rows.len() - n_post;
    if n_post == 0 || n_pre == 0 {
        return Err(Error::Validation(
            "logistic initialization needs observed proxies in both periods".into(),
        ));
    }
    let x = DMatrix::from_fn(rows.len(), p, |i, j| if j == 0 { 1.0 } else { panel.z_row(rows[i])[columns[j - 1]] });
    let a = DVector::from_iterator(rows.len(), rows.iter().map(|&t| if panel.is_pre(t) { 0.0 } else { 1.0 }));
    let n = rows.len() as f64;

    let mut coef = DVector::zeros(p);
    coef[0] = (n_post as f64 / n_pre as f64).ln();
    let mut converged = false;
    let mut separated = false;
    let mut iterations = 0;
    let loglik = |c: &DVector<f64>| -> f64 {
        let eta = &x * c;
        eta.iter()
            .zip(a.iter())
            .map(|(&e, &ai)| ai * e - softplus(e))
            .sum::<f64>()
    };
    while iterations < 100 {
        let eta = &x * &coef;
        if eta.amax() >= ETA_CLAMP {
            separated = true;
            break;
        }
        let prob = eta.map(sigmoid);
        let score = x.transpose() * (&a - &prob) / n;
        if score.amax() < 1e-10 {
            converged = true;
            break;
        }
        iterations += 1;
        let wts = prob.map(|v| v * (1.0 - v));
        let mut info = DMatrix::zeros(p, p);
        for (i, &wi) in wts.iter().enumerate() {
            let row = x.row(i);
            info += row.transpose() * row * (wi / n);
        }
        for i in 0..p {
            info[(i, i)] += 1e-12;
        }
        let Some(chol) = info.cholesky() else {
            separated = true;
            break;
        };
        let step = chol.solve(&score);
        // step halving keeps the log-likelihood nondecreasing
        let base = loglik(&coef);
        let mut t = 1.0;
        let mut next = &coef + &step;
        while loglik(&next) < base && t > 1e-8 {
            t *= 0.5;
            next = &coef + &step * t;
        }
        coef = next;
    }

    let eta_max = (&x * &coef).amax();
    if eta_max > ETA_CLAMP {
        coef *= ETA_CLAMP / eta_max;
        separated = true;
    }
    // fitted probabilities reproducing the labels signal perfect separation
    let eta = &x * &coef;
    if eta.iter().zip(a.iter()).all(|(&e, &ai)| (ai - sigmoid(e)).abs() < 1e-6) {
        separated = true;
    }
    if separated {
        converged = false;
    }
    coef[0] -= (n_post as f64 / n_pre as f64).ln();
    Ok(LogisticInit {
        params: TreatmentBridgeParams::on_columns(coef.iter().copied().collect(), columns.to_vec())?,
        converged,
        separated,
        iterations,
        rows_used: rows.len(),
    })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
