//! GMM estimation: quadratic-form objective, starting values, quasi-Newton
//! minimization, HAC sandwich covariance and Wald intervals for the ATT.

mod bfgs;
pub mod hac;
pub mod init;
pub mod sandwich;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::bridges::eval_loglinear;
use crate::error::{Error, Result};
use crate::moments::{MomentSpec, MomentSystem, ThetaLayout};
use crate::normal;
use crate::panel::PanelData;
use crate::rng::open_unit;

pub use hac::{hac_meat, newey_west_lag, Bandwidth, HacEstimate, HacOptions, Kernel};
pub use init::{init_h_ols, init_h_ols_on, init_q_logistic, LogisticInit, OlsInit};
pub use sandwich::sandwich_vcov;

/// Objective values below this count as an exact solution.
pub const EXACT_OBJECTIVE: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Default)]
pub enum WeightMatrix {
    #[default]
    Identity,
    Fixed(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmOptions {
    pub weight_matrix: WeightMatrix,
    pub max_iter: usize,
    /// Sup-norm tolerance on the objective gradient.
    pub grad_tol: f64,
    /// Number of starting points; extra starts perturb the initialization.
    pub multi_start: usize,
    /// Seed for the multi-start perturbations.
    pub seed: u64,
    pub hac: HacOptions,
    pub ci_level: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            weight_matrix: WeightMatrix::Identity,
            max_iter: 1000,
            grad_tol: 1e-8,
            multi_start: 1,
            seed: 0,
            hac: HacOptions::default(),
            ci_level: 0.95,
        }
    }
}

impl GmmOptions {
    fn omega(&self, m: usize) -> Result<DMatrix<f64>> {
        match &self.weight_matrix {
            WeightMatrix::Identity => Ok(DMatrix::identity(m, m)),
            WeightMatrix::Fixed(w) => {
                if w.shape() != (m, m) {
                    return Err(Error::dim(m, w.nrows(), "weight matrix"));
                }
                let scale = w.abs().max().max(f64::MIN_POSITIVE);
                if (w - w.transpose()).abs().max() > 1e-12 * scale {
                    return Err(Error::Validation("weight matrix must be symmetric".into()));
                }
                let min = SymmetricEigen::new(w.clone()).eigenvalues.min();
                if min < -1e-10 * scale {
                    return Err(Error::Validation("weight matrix must be positive semi-definite".into()));
                }
                Ok(w.clone())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Validation(format!("CI level {} outside (0, 1)", self.ci_level)));
        }
        if self.multi_start == 0 {
            return Err(Error::Validation("multi_start must be at least 1".into()));
        }
        if self.hac.prewhiten {
            return Err(Error::Unsupported("prewhitened HAC estimation".into()));
        }
        Ok(())
    }
}

/// Objective value and gradient at one parameter vector.
#[derive(Debug, Clone)]
pub struct ObjectiveValue {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Some moment was not finite; `value` is then infinite or NaN.
    pub non_finite: bool,
    pub clamps: usize,
}

struct GmmProblem<'a> {
    system: MomentSystem<'a>,
    omega: Option<DMatrix<f64>>,
}

impl GmmProblem<'_> {
    fn apply_omega(&self, g: &DVector<f64>) -> DVector<f64> {
        match &self.omega {
            Some(w) => w * g,
            None => g.clone(),
        }
    }

    fn evaluate(&mut self, theta: &[f64]) -> Result<(f64, DVector<f64>, DMatrix<f64>, usize)> {
        let (g, jac, clamps) = self.system.mean(theta, true)?;
        let jac = jac.unwrap();
        let wg = self.apply_omega(&g);
        let value = g.dot(&wg);
        let grad = jac.transpose() * wg * 2.0;
        Ok((value, grad, jac, clamps))
    }
}

impl bfgs::Problem for GmmProblem<'_> {
    fn value_grad(&mut self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let (v, g, _, _) = self.evaluate(x.as_slice())?;
        let v = if v.is_finite() && g.iter().all(|e| e.is_finite()) { v } else { f64::INFINITY };
        Ok((v, g))
    }

    fn curvature(&mut self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (_, _, jac, _) = self.evaluate(x.as_slice())?;
        let wj = match &self.omega {
            Some(w) => w * &jac,
            None => jac.clone(),
        };
        Ok(jac.transpose() * wj * 2.0)
    }
}

fn problem<'a>(panel: &'a PanelData, spec: &'a MomentSpec, options: &GmmOptions) -> Result<GmmProblem<'a>> {
    let system = MomentSystem::new(panel, spec)?;
    let omega = match options.weight_matrix {
        WeightMatrix::Identity => None,
        WeightMatrix::Fixed(_) => Some(options.omega(system.moment_dim())?),
    };
    Ok(GmmProblem { system, omega })
}

/// `Gbar' Omega Gbar` and its gradient `2 Jbar' Omega Gbar`.
pub fn objective(theta: &[f64], panel: &PanelData, spec: &MomentSpec, options: &GmmOptions) -> Result<ObjectiveValue> {
    let mut prob = problem(panel, spec, options)?;
    let (value, grad, _, clamps) = prob.evaluate(theta)?;
    let non_finite = !value.is_finite() || grad.iter().any(|v| !v.is_finite());
    Ok(ObjectiveValue {
        value,
        gradient: grad.iter().copied().collect(),
        non_finite,
        clamps,
    })
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub grad_norm: f64,
    pub objective_init: f64,
    pub hessian_resets: usize,
    pub starts: usize,
    pub moment_dim: usize,
    pub param_dim: usize,
    pub hac_lag: usize,
    pub hac_clipped: bool,
    pub hac_rank_warning: bool,
    pub ols_ridge: bool,
    pub logistic_converged: Option<bool>,
    pub logistic_separated: Option<bool>,
    /// Why the covariance could not be computed, if it could not.
    pub inference_error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub theta_hat: Vec<f64>,
    pub layout: ThetaLayout,
    pub objective_value: f64,
    pub converged: bool,
    pub vcov: DMatrix<f64>,
    pub att_estimate: f64,
    pub att_se: f64,
    /// `None` when the fit failed to converge or the SE is unavailable.
    pub att_ci: Option<(f64, f64)>,
    /// Pre-period rows whose treatment-bridge predictor hit the clamp at the optimum.
    pub n_clamps: usize,
    pub diagnostics: FitDiagnostics,
}

impl GmmFit {
    pub fn alpha(&self) -> Option<&[f64]> {
        self.layout.alpha.clone().map(|r| &self.theta_hat[r])
    }

    pub fn beta(&self) -> Option<&[f64]> {
        self.layout.beta.clone().map(|r| &self.theta_hat[r])
    }
}

/// Estimate `+/- z_{(1+level)/2} * se`; `None` for a non-finite SE.
pub fn wald_interval(estimate: f64, se: f64, level: f64) -> Option<(f64, f64)> {
    if !(se.is_finite() && se >= 0.0 && estimate.is_finite()) {
        return None;
    }
    let half = normal::two_sided_critical(level) * se;
    Some((estimate - half, estimate + half))
}

/// Wald interval for the ATT of a fit; empty (`None`) unless it converged.
pub fn wald_ci(fit: &GmmFit, level: f64) -> Option<(f64, f64)> {
    if !fit.converged {
        return None;
    }
    wald_interval(fit.att_estimate, fit.att_se, level)
}

/// Default starting point: OLS and logistic bridges, difference-in-means ATT,
/// and the centering parameters implied by those bridges.
pub fn initial_theta(panel: &PanelData, spec: &MomentSpec) -> Result<(Vec<f64>, FitDiagnostics)> {
    spec.validate(panel)?;
    let layout = spec.layout();
    let mut theta = vec![0.0; layout.len];
    let mut diag = FitDiagnostics::default();
    let n0 = panel.t0();
    let y = panel.y();

    let mut alpha = None;
    if let Some(r) = layout.alpha.clone() {
        let ols = init_h_ols_on(panel, &spec.h_columns)?;
        diag.ols_ridge = ols.ridge_used;
        theta[r].copy_from_slice(&ols.params.alpha);
        alpha = Some(ols.params);
    }
    let pre_mean = y[..n0].iter().sum::<f64>() / n0 as f64;
    let post_mean = y[n0..].iter().sum::<f64>() / panel.n_post() as f64;
    theta[layout.lambda] = post_mean - pre_mean;

    if let (Some(br), Some(pr), Some(pm)) = (layout.beta.clone(), layout.psi.clone(), layout.psi_minus) {
        let beta = match init_q_logistic(panel, &spec.q_columns) {
            Ok(fit) => {
                diag.logistic_converged = Some(fit.converged);
                diag.logistic_separated = Some(fit.separated);
                fit.params.beta
            }
            Err(_) => {
                diag.logistic_converged = Some(false);
                vec![0.0; spec.q_columns.len() + 1]
            }
        };
        theta[br].copy_from_slice(&beta);
        let mut psi = vec![0.0; spec.gq.output_dim()];
        let mut buf = vec![0.0; psi.len()];
        let mut psi_m = 0.0;
        for t in 0..n0 {
            let (q, _) = eval_loglinear(&beta, &spec.q_columns, panel.z_row(t));
            spec.gq.eval_row_into(panel.w_row(t), &mut buf);
            for (p, b) in psi.iter_mut().zip(&buf) {
                *p += q * b;
            }
            let resid = match &alpha {
                Some(h) => y[t] - h.eval(panel.w_row(t))?,
                None => y[t],
            };
            psi_m += q * resid;
        }
        for (slot, v) in theta[pr].iter_mut().zip(psi) {
            *slot = v / n0 as f64;
        }
        theta[pm] = psi_m / n0 as f64;
    }
    Ok((theta, diag))
}

/// Fits the moment system in `spec`. `init` overrides the default start.
pub fn fit(panel: &PanelData, spec: &MomentSpec, options: &GmmOptions, init: Option<&[f64]>) -> Result<GmmFit> {
    options.validate()?;
    let (default_start, mut diag) = initial_theta(panel, spec)?;
    let start = match init {
        Some(t) => {
            if t.len() != default_start.len() {
                return Err(Error::dim(default_start.len(), t.len(), "initial parameter vector"));
            }
            t.to_vec()
        }
        None => default_start,
    };
    let mut prob = problem(panel, spec, options)?;
    let layout = spec.layout();
    diag.moment_dim = prob.system.moment_dim();
    diag.param_dim = layout.len;
    let bfgs_opts = bfgs::BfgsOptions {
        max_iter: options.max_iter,
        grad_tol: options.grad_tol,
        value_tol: EXACT_OBJECTIVE,
    };

    let mut rng = ChaCha20Rng::seed_from_u64(options.seed);
    let mut best: Option<bfgs::BfgsOutcome> = None;
    for k in 0..options.multi_start {
        let x0 = if k == 0 {
            DVector::from_vec(start.clone())
        } else {
            DVector::from_iterator(
                start.len(),
                start.iter().map(|v| v + 0.5 * normal::quantile(open_unit(rng.next_u64()))),
            )
        };
        if k == 0 {
            diag.objective_init = bfgs::Problem::value_grad(&mut prob, &x0)?.0;
        }
        let out = bfgs::minimize(&mut prob, x0, &bfgs_opts)?;
        let better = match &best {
            None => true,
            Some(b) => out.value < b.value || (!b.value.is_finite() && out.value.is_finite()),
        };
        if better {
            best = Some(out);
        }
    }
    let best = best.expect("at least one start");
    diag.iterations = best.iterations;
    diag.grad_norm = best.grad_norm;
    diag.hessian_resets = best.resets;
    diag.starts = options.multi_start;

    let theta_hat: Vec<f64> = best.x.iter().copied().collect();
    let (_, _, jac, clamps) = prob.evaluate(&theta_hat)?;
    let n = panel.n_periods();
    let p = layout.len;
    let mut vcov = DMatrix::from_element(p, p, f64::NAN);
    if best.value.is_finite() {
        let series = prob.system.series(&theta_hat)?;
        match hac_meat(&series, &options.hac) {
            Ok(meat) => {
                diag.hac_lag = meat.lag;
                diag.hac_clipped = meat.clipped;
                diag.hac_rank_warning = meat.rank_warning;
                let omega = options.omega(diag.moment_dim)?;
                match sandwich::sandwich_with_layout(&jac, &omega, &meat.matrix, n, &layout) {
                    Ok(v) => vcov = v,
                    Err(e) => diag.inference_error = Some(e.to_string()),
                }
            }
            Err(e) => diag.inference_error = Some(e.to_string()),
        }
    } else {
        diag.inference_error = Some("objective is not finite at the optimum".into());
    }

    let att_estimate = theta_hat[layout.lambda];
    let att_var = vcov[(layout.lambda, layout.lambda)];
    let att_se = if att_var.is_finite() { att_var.max(0.0).sqrt() } else { f64::NAN };
    let mut fit = GmmFit {
        theta_hat,
        layout,
        objective_value: best.value,
        converged: best.converged,
        vcov,
        att_estimate,
        att_se,
        att_ci: None,
        n_clamps: clamps,
        diagnostics: diag,
    };
    fit.att_ci = wald_ci(&fit, options.ci_level);
    Ok(fit)
}
