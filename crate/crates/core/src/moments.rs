//! Per-period GMM moment functions and their analytic Jacobians.
//!
//! Three systems are supported:
//!
//! * doubly robust: outcome-bridge block `[Y - h(W)] g_h(Z)` (pre), post centering
//!   `psi - g_q(W)`, pre weighting `q(Z) g_q(W) - psi`, post ATT block
//!   `lambda - c_t [Y - h(W)] + psi_m` and pre centering `psi_m - q(Z) [Y - h(W)]`;
//! * weighting only: the same without the outcome bridge (`h = 0`, no first block);
//! * outcome only: the first block plus `lambda - c_t [Y - h(W)]` (post).
//!
//! `c_t = 1` in the stationary form and `c_t = (T - T0) ell(t)` otherwise.
//! Period indices are zero-based: `t < T0` is pre-treatment. Supplemental
//! proxies are only read in pre-treatment periods.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bridges::{eval_linear, eval_loglinear, BasisKind, InstrumentBasis};
use crate::error::{Error, Result};
use crate::panel::PanelData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    OutcomeOnly,
    WeightingOnly,
    DoublyRobust,
}

impl Method {
    pub fn uses_outcome_bridge(self) -> bool {
        !matches!(self, Method::WeightingOnly)
    }

    pub fn uses_treatment_bridge(self) -> bool {
        !matches!(self, Method::OutcomeOnly)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "h" | "outcome" => Ok(Method::OutcomeOnly),
            "q" | "weighting" => Ok(Method::WeightingOnly),
            "dr" => Ok(Method::DoublyRobust),
            other => Err(Error::Validation(format!("unknown method `{other}` (expected h, q or dr)"))),
        }
    }
}

/// Importance weights `ell` over the post-treatment periods.
#[derive(Debug, Clone, PartialEq)]
pub enum ImportanceWeights {
    /// `1 / (T - T0)` everywhere; the post-period scale `c_t` is exactly 1.
    Uniform,
    /// Explicit weights, one per post period, nonnegative and summing to 1.
    Custom(Vec<f64>),
}

/// Which moment system to use and how the bridges are parameterized.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSpec {
    pub method: Method,
    pub stationary: bool,
    /// Donor columns entering the outcome bridge.
    pub h_columns: Vec<usize>,
    /// Supplemental columns entering the treatment bridge.
    pub q_columns: Vec<usize>,
    /// Instruments for the outcome bridge, built from supplemental proxies.
    pub gh: InstrumentBasis,
    /// Instruments for the treatment bridge, built from donor proxies.
    pub gq: InstrumentBasis,
    pub ell: ImportanceWeights,
}

impl MomentSpec {
    /// All columns in both bridges, affine instruments, stationary, uniform weights.
    pub fn new(method: Method, panel: &PanelData) -> Self {
        MomentSpec {
            method,
            stationary: true,
            h_columns: (0..panel.dw()).collect(),
            q_columns: (0..panel.dz()).collect(),
            gh: InstrumentBasis::all(BasisKind::Affine, panel.dz()),
            gq: InstrumentBasis::all(BasisKind::Affine, panel.dw()),
            ell: ImportanceWeights::Uniform,
        }
    }

    pub fn layout(&self) -> ThetaLayout {
        ThetaLayout::new(self)
    }

    pub fn moment_layout(&self) -> MomentLayout {
        MomentLayout::new(self)
    }

    pub fn moment_dim(&self) -> usize {
        self.moment_layout().len
    }

    pub fn validate(&self, panel: &PanelData) -> Result<()> {
        let check = |cols: &[usize], bound: usize, what: &str| -> Result<()> {
            if cols.windows(2).any(|p| p[1] <= p[0]) {
                return Err(Error::Validation(format!("{what}: column indices must be strictly increasing")));
            }
            if let Some(&c) = cols.last() {
                if c >= bound {
                    return Err(Error::Validation(format!(
                        "{what}: column {} out of range (have {bound})",
                        c + 1
                    )));
                }
            }
            Ok(())
        };
        if self.method.uses_outcome_bridge() {
            check(&self.h_columns, panel.dw(), "outcome bridge donors")?;
            check(&self.gh.columns, panel.dz(), "outcome-bridge instruments")?;
        }
        if self.method.uses_treatment_bridge() {
            check(&self.q_columns, panel.dz(), "treatment bridge proxies")?;
            check(&self.gq.columns, panel.dw(), "treatment-bridge instruments")?;
        }
        if let ImportanceWeights::Custom(ell) = &self.ell {
            if ell.len() != panel.n_post() {
                return Err(Error::dim(panel.n_post(), ell.len(), "importance weights"));
            }
            if ell.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Validation("importance weights must be finite and nonnegative".into()));
            }
            let total: f64 = ell.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Validation(format!("importance weights sum to {total}, not 1")));
            }
        }
        let (m, p) = (self.moment_dim(), self.layout().len);
        if m < p {
            return Err(Error::Validation(format!(
                "moment system is under-identified: {m} moments for {p} parameters"
            )));
        }
        Ok(())
    }

    /// Post-period multiplier `c_t` of the residual in the ATT block.
    #[inline]
    fn post_scale(&self, t: usize, panel: &PanelData) -> f64 {
        match (&self.ell, self.stationary) {
            (_, true) | (ImportanceWeights::Uniform, false) => 1.0,
            (ImportanceWeights::Custom(ell), false) => panel.n_post() as f64 * ell[t - panel.t0()],
        }
    }
}

/// Positions of the parameter blocks `(alpha, beta, lambda, psi, psi_m)` in theta.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThetaLayout {
    pub alpha: Option<Range<usize>>,
    pub beta: Option<Range<usize>>,
    pub lambda: usize,
    pub psi: Option<Range<usize>>,
    pub psi_minus: Option<usize>,
    pub len: usize,
}

impl ThetaLayout {
    fn new(spec: &MomentSpec) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let alpha = spec.method.uses_outcome_bridge().then(|| take(spec.h_columns.len() + 1));
        let beta = spec.method.uses_treatment_bridge().then(|| take(spec.q_columns.len() + 1));
        let lambda = take(1).start;
        let psi = spec.method.uses_treatment_bridge().then(|| take(spec.gq.output_dim()));
        let psi_minus = spec.method.uses_treatment_bridge().then(|| take(1).start);
        ThetaLayout {
            alpha,
            beta,
            lambda,
            psi,
            psi_minus,
            len: at,
        }
    }

    /// Name of the block holding parameter `i`.
    pub fn block_of(&self, i: usize) -> &'static str {
        let within = |r: &Option<Range<usize>>| r.as_ref().is_some_and(|r| r.contains(&i));
        if within(&self.alpha) {
            "alpha"
        } else if within(&self.beta) {
            "beta"
        } else if i == self.lambda {
            "lambda"
        } else if within(&self.psi) {
            "psi"
        } else {
            "psi_minus"
        }
    }
}

/// Positions of the moment blocks in `G_t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MomentLayout {
    /// `[Y - h(W)] g_h(Z)`, pre.
    pub outcome: Option<Range<usize>>,
    /// `psi - g_q(W)`, post.
    pub post_center: Option<Range<usize>>,
    /// `q(Z) g_q(W) - psi`, pre.
    pub pre_weight: Option<Range<usize>>,
    /// ATT block, post.
    pub post_att: usize,
    /// `psi_m - q(Z) [Y - h(W)]`, pre.
    pub pre_center: Option<usize>,
    pub len: usize,
}

impl MomentLayout {
    fn new(spec: &MomentSpec) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let dr = spec.method.uses_treatment_bridge();
        let outcome = spec.method.uses_outcome_bridge().then(|| take(spec.gh.output_dim()));
        let post_center = dr.then(|| take(spec.gq.output_dim()));
        let pre_weight = dr.then(|| take(spec.gq.output_dim()));
        let post_att = take(1).start;
        let pre_center = dr.then(|| take(1).start);
        MomentLayout {
            outcome,
            post_center,
            pre_weight,
            post_att,
            pre_center,
            len: at,
        }
    }
}

/// Evaluates one system over a panel. Holds scratch buffers, so each
/// thread needs its own instance.
pub(crate) struct MomentSystem<'a> {
    panel: &'a PanelData,
    spec: &'a MomentSpec,
    pub(crate) theta_layout: ThetaLayout,
    pub(crate) moment_layout: MomentLayout,
    gh_buf: Vec<f64>,
    gq_buf: Vec<f64>,
}

impl<'a> MomentSystem<'a> {
    pub(crate) fn new(panel: &'a PanelData, spec: &'a MomentSpec) -> Result<Self> {
        spec.validate(panel)?;
        Ok(MomentSystem {
            panel,
            spec,
            theta_layout: spec.layout(),
            moment_layout: spec.moment_layout(),
            gh_buf: vec![0.0; spec.gh.output_dim()],
            gq_buf: vec![0.0; spec.gq.output_dim()],
        })
    }

    pub(crate) fn moment_dim(&self) -> usize {
        self.moment_layout.len
    }

    pub(crate) fn param_dim(&self) -> usize {
        self.theta_layout.len
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta_layout.len {
            return Err(Error::dim(self.theta_layout.len, theta.len(), "parameter vector"));
        }
        Ok(())
    }

    /// Adds `s * G_t(theta)` to `g` and, when given, `s * dG_t/dtheta` to `jac`.
    /// Returns whether the treatment-bridge predictor was clamped.
    pub(crate) fn accumulate(
        &mut self,
        theta: &[f64],
        t: usize,
        s: f64,
        g: &mut [f64],
        jac: Option<&mut DMatrix<f64>>,
    ) -> bool {
        let panel = self.panel;
        let spec = self.spec;
        let tl = &self.theta_layout;
        let ml = &self.moment_layout;
        let y = panel.y()[t];
        let w = panel.w_row(t);
        let lam = theta[tl.lambda];
        let psi_m = tl.psi_minus.map(|i| theta[i]).unwrap_or(0.0);
        let alpha = tl.alpha.clone().map(|r| &theta[r]);
        // residual Y - h(W); the weighting-only system uses h = 0
        let r = match alpha {
            Some(a) => y - eval_linear(a, &spec.h_columns, w),
            None => y,
        };
        let mut clamped = false;

        if panel.is_pre(t) {
            let z = panel.z_row(t);
            if let Some(rows) = ml.outcome.clone() {
                spec.gh.eval_row_into(z, &mut self.gh_buf);
                for (k, i) in rows.enumerate() {
                    g[i] += s * r * self.gh_buf[k];
                }
            }
            if let (Some(beta_r), Some(psi_r)) = (tl.beta.clone(), tl.psi.clone()) {
                let (q, c) = eval_loglinear(&theta[beta_r], &spec.q_columns, z);
                clamped = c;
                spec.gq.eval_row_into(w, &mut self.gq_buf);
                let rows = ml.pre_weight.clone().unwrap();
                for (k, i) in rows.enumerate() {
                    g[i] += s * (q * self.gq_buf[k] - theta[psi_r.start + k]);
                }
                g[ml.pre_center.unwrap()] += s * (psi_m - q * r);
            }
            if let Some(jac) = jac {
                self.pre_jacobian(theta, t, s, r, clamped, jac);
            }
        } else {
            let c = spec.post_scale(t, panel);
            if let (Some(rows), Some(psi_r)) = (ml.post_center.clone(), tl.psi.clone()) {
                spec.gq.eval_row_into(w, &mut self.gq_buf);
                for (k, i) in rows.enumerate() {
                    g[i] += s * (theta[psi_r.start + k] - self.gq_buf[k]);
                }
            }
            g[ml.post_att] += s * (lam - c * r + psi_m);
            if let Some(jac) = jac {
                let i = ml.post_att;
                jac[(i, tl.lambda)] += s;
                if let Some(j) = tl.psi_minus {
                    jac[(i, j)] += s;
                }
                if let Some(ar) = tl.alpha.clone() {
                    jac[(i, ar.start)] += s * c;
                    for (k, &col) in spec.h_columns.iter().enumerate() {
                        jac[(i, ar.start + 1 + k)] += s * c * w[col];
                    }
                }
                if let (Some(rows), Some(psi_r)) = (ml.post_center.clone(), tl.psi.clone()) {
                    for (k, i) in rows.enumerate() {
                        jac[(i, psi_r.start + k)] += s;
                    }
                }
            }
        }
        clamped
    }

    /// Pre-period Jacobian; `gh_buf`/`gq_buf` hold this period's instruments.
    fn pre_jacobian(&self, theta: &[f64], t: usize, s: f64, r: f64, clamped: bool, jac: &mut DMatrix<f64>) {
        let spec = self.spec;
        let tl = &self.theta_layout;
        let ml = &self.moment_layout;
        let w = self.panel.w_row(t);
        let z = self.panel.z_row(t);

        if let (Some(rows), Some(ar)) = (ml.outcome.clone(), tl.alpha.clone()) {
            // d/d alpha of r * g_h = -g_h (1, w_S)^T
            for (k, i) in rows.enumerate() {
                let gk = s * self.gh_buf[k];
                jac[(i, ar.start)] -= gk;
                for (j, &col) in spec.h_columns.iter().enumerate() {
                    jac[(i, ar.start + 1 + j)] -= gk * w[col];
                }
            }
        }
        let (Some(br), Some(psi_r)) = (tl.beta.clone(), tl.psi.clone()) else {
            return;
        };
        let (q, _) = eval_loglinear(&theta[br.clone()], &spec.q_columns, z);
        // dq/dbeta = q (1, z_S), zero where the predictor is clamped
        let dq = if clamped { 0.0 } else { q };
        let rows = ml.pre_weight.clone().unwrap();
        for (k, i) in rows.enumerate() {
            let gk = s * self.gq_buf[k] * dq;
            jac[(i, br.start)] += gk;
            for (j, &col) in spec.q_columns.iter().enumerate() {
                jac[(i, br.start + 1 + j)] += gk * z[col];
            }
            jac[(i, psi_r.start + k)] -= s;
        }
        let i = ml.pre_center.unwrap();
        jac[(i, tl.psi_minus.unwrap())] += s;
        let f = -s * r * dq;
        jac[(i, br.start)] += f;
        for (j, &col) in spec.q_columns.iter().enumerate() {
            jac[(i, br.start + 1 + j)] += f * z[col];
        }
        if let Some(ar) = tl.alpha.clone() {
            jac[(i, ar.start)] += s * q;
            for (j, &col) in spec.h_columns.iter().enumerate() {
                jac[(i, ar.start + 1 + j)] += s * q * w[col];
            }
        }
    }

    /// `(1/T) sum_t G_t`, optionally the mean Jacobian, and the clamp count.
    pub(crate) fn mean(&mut self, theta: &[f64], with_jac: bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>, usize)> {
        self.check_theta(theta)?;
        let n = self.panel.n_periods();
        let mut g = vec![0.0; self.moment_dim()];
        let mut jac = with_jac.then(|| DMatrix::zeros(self.moment_dim(), self.param_dim()));
        let mut clamps = 0;
        for t in 0..n {
            clamps += self.accumulate(theta, t, 1.0, &mut g, jac.as_mut()) as usize;
        }
        let inv = 1.0 / n as f64;
        let g = DVector::from_iterator(g.len(), g.into_iter().map(|v| v * inv));
        let jac = jac.map(|j| j * inv);
        Ok((g, jac, clamps))
    }

    /// `T × m` matrix whose row `t` is `G_t(theta)`.
    pub(crate) fn series(&mut self, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        let n = self.panel.n_periods();
        let m = self.moment_dim();
        let mut out = DMatrix::zeros(n, m);
        let mut row = vec![0.0; m];
        for t in 0..n {
            row.iter_mut().for_each(|v| *v = 0.0);
            self.accumulate(theta, t, 1.0, &mut row, None);
            for (i, v) in row.iter().enumerate() {
                out[(t, i)] = *v;
            }
        }
        Ok(out)
    }
}

fn check_period(t: usize, panel: &PanelData) -> Result<()> {
    if t >= panel.n_periods() {
        return Err(Error::Validation(format!(
            "period index {t} out of range for T={}",
            panel.n_periods()
        )));
    }
    Ok(())
}

/// `G_t(theta)` for the system selected by `spec.method`. `t` is zero-based.
pub fn moment_vector(theta: &[f64], t: usize, panel: &PanelData, spec: &MomentSpec) -> Result<Vec<f64>> {
    check_period(t, panel)?;
    let mut sys = MomentSystem::new(panel, spec)?;
    sys.check_theta(theta)?;
    let mut g = vec![0.0; sys.moment_dim()];
    sys.accumulate(theta, t, 1.0, &mut g, None);
    Ok(g)
}

fn expect_method(spec: &MomentSpec, method: Method) -> Result<()> {
    if spec.method != method {
        return Err(Error::Validation(format!(
            "moment spec selects {:?}, not {method:?}",
            spec.method
        )));
    }
    Ok(())
}

/// Doubly robust moment vector, length `d_alpha' + 2 d_beta' + 2`.
pub fn moment_dr(theta: &[f64], t: usize, panel: &PanelData, spec: &MomentSpec) -> Result<Vec<f64>> {
    expect_method(spec, Method::DoublyRobust)?;
    moment_vector(theta, t, panel, spec)
}

/// Weighting-only moment vector, length `2 d_beta' + 2`.
pub fn moment_q(theta: &[f64], t: usize, panel: &PanelData, spec: &MomentSpec) -> Result<Vec<f64>> {
    expect_method(spec, Method::WeightingOnly)?;
    moment_vector(theta, t, panel, spec)
}

/// Outcome-only moment vector, length `d_alpha' + 1`.
pub fn moment_h(theta: &[f64], t: usize, panel: &PanelData, spec: &MomentSpec) -> Result<Vec<f64>> {
    expect_method(spec, Method::OutcomeOnly)?;
    moment_vector(theta, t, panel, spec)
}

/// `dG_t/dtheta` (moment dim × parameter dim).
pub fn moment_jacobian(theta: &[f64], t: usize, panel: &PanelData, spec: &MomentSpec) -> Result<DMatrix<f64>> {
    check_period(t, panel)?;
    let mut sys = MomentSystem::new(panel, spec)?;
    sys.check_theta(theta)?;
    let mut g = vec![0.0; sys.moment_dim()];
    let mut jac = DMatrix::zeros(sys.moment_dim(), sys.param_dim());
    sys.accumulate(theta, t, 1.0, &mut g, Some(&mut jac));
    Ok(jac)
}

/// `(1/T) sum_t G_t(theta)`.
pub fn average_moment(theta: &[f64], panel: &PanelData, spec: &MomentSpec) -> Result<Vec<f64>> {
    let mut sys = MomentSystem::new(panel, spec)?;
    let (g, _, _) = sys.mean(theta, false)?;
    Ok(g.iter().copied().collect())
}

/// Rows are `G_t(theta)` for `t = 0..T`.
pub fn moment_series(theta: &[f64], panel: &PanelData, spec: &MomentSpec) -> Result<DMatrix<f64>> {
    MomentSystem::new(panel, spec)?.series(theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_panel(y: [f64; 2], w: [f64; 2], z: [f64; 2]) -> PanelData {
        PanelData::new(y.to_vec(), w.to_vec(), 1, z.to_vec(), 1, 1).unwrap()
    }

    #[test]
    fn dimensions_follow_block_structure() {
        let p = PanelData::new(vec![0.0; 4], vec![0.0; 8], 2, vec![0.0; 12], 3, 2).unwrap();
        let dr = MomentSpec::new(Method::DoublyRobust, &p);
        // d_alpha' = 4, d_beta' = 3
        assert_eq!(dr.moment_dim(), 4 + 2 * 3 + 2);
        assert_eq!(dr.layout().len, 3 + 4 + 1 + 3 + 1);
        let q = MomentSpec::new(Method::WeightingOnly, &p);
        assert_eq!(q.moment_dim(), 2 * 3 + 2);
        assert_eq!(q.layout().len, 4 + 1 + 3 + 1);
        let h = MomentSpec::new(Method::OutcomeOnly, &p);
        assert_eq!(h.moment_dim(), 4 + 1);
        assert_eq!(h.layout().len, 3 + 1);
    }

    #[test]
    fn dr_scalar_hand_evaluation() {
        // pre row Y=1, W=2, Z=3
        let p = scalar_panel([1.0, 0.0], [2.0, 0.0], [3.0, 0.0]);
        let spec = MomentSpec::new(Method::DoublyRobust, &p);
        // alpha=(0,1), beta=(0,0), lambda=0, psi=(0,0), psi_m=0
        let theta = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let g = moment_dr(&theta, 0, &p, &spec).unwrap();
        assert_eq!(g, vec![-1.0, -3.0, 0.0, 0.0, 1.0, 2.0, 0.0, 1.0]);
    }

    #[test]
    fn q_scalar_hand_evaluation() {
        // post row Y=5, W=2
        let p = scalar_panel([0.0, 5.0], [0.0, 2.0], [0.0, 0.0]);
        let spec = MomentSpec::new(Method::WeightingOnly, &p);
        // beta=(0,0), lambda=3, psi=(1,1), psi_m=0
        let theta = [0.0, 0.0, 3.0, 1.0, 1.0, 0.0];
        let g = moment_q(&theta, 1, &p, &spec).unwrap();
        assert_eq!(g, vec![0.0, -1.0, 0.0, 0.0, -2.0, 0.0]);
    }

    #[test]
    fn h_scalar_hand_evaluation() {
        let p = scalar_panel([0.0, 4.0], [0.0, 1.0], [0.0, 0.0]);
        let spec = MomentSpec::new(Method::OutcomeOnly, &p);
        let g = moment_h(&[1.0, 1.0, 2.0], 1, &p, &spec).unwrap();
        assert_eq!(g, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn perfect_intercept_fit_zeroes_outcome_block() {
        let p = PanelData::new(vec![3.5, 1.0, 2.0], vec![9.0, 1.0, 1.0, -4.0, 2.0, 2.0], 2, vec![7.0, 1.0, 1.0], 1, 1)
            .unwrap();
        let spec = MomentSpec::new(Method::DoublyRobust, &p);
        let l = spec.layout();
        let mut theta = vec![0.1; l.len];
        theta[0] = 3.5;
        theta[1] = 0.0;
        theta[2] = 0.0;
        theta[l.psi_minus.unwrap()] = 0.25;
        let g = moment_dr(&theta, 0, &p, &spec).unwrap();
        let ml = spec.moment_layout();
        assert!(g[ml.outcome.clone().unwrap()].iter().all(|&v| v == 0.0));
        assert_eq!(g[ml.pre_center.unwrap()], 0.25);
    }

    #[test]
    fn wrong_system_is_rejected() {
        let p = scalar_panel([1.0, 2.0], [1.0, 2.0], [1.0, 2.0]);
        let spec = MomentSpec::new(Method::OutcomeOnly, &p);
        assert!(moment_dr(&[0.0; 3], 0, &p, &spec).is_err());
        assert!(moment_h(&[0.0; 4], 0, &p, &spec).is_err());
        assert!(moment_h(&[0.0; 3], 2, &p, &spec).is_err());
    }

    #[test]
    fn importance_weights_are_validated() {
        let p = PanelData::new(vec![0.0; 4], vec![0.0; 4], 1, vec![0.0; 4], 1, 2).unwrap();
        let mut spec = MomentSpec::new(Method::DoublyRobust, &p);
        spec.stationary = false;
        spec.ell = ImportanceWeights::Custom(vec![0.5, 0.4]);
        assert!(spec.validate(&p).is_err());
        spec.ell = ImportanceWeights::Custom(vec![0.5]);
        assert!(spec.validate(&p).is_err());
        spec.ell = ImportanceWeights::Custom(vec![1.5, -0.5]);
        assert!(spec.validate(&p).is_err());
        spec.ell = ImportanceWeights::Custom(vec![0.25, 0.75]);
        assert!(spec.validate(&p).is_ok());
    }

    #[test]
    fn custom_weights_scale_the_post_residual() {
        let p = PanelData::new(vec![0.0, 0.0, 4.0, 6.0], vec![0.0; 4], 1, vec![0.0; 4], 1, 2).unwrap();
        let mut spec = MomentSpec::new(Method::WeightingOnly, &p);
        spec.stationary = false;
        spec.ell = ImportanceWeights::Custom(vec![0.25, 0.75]);
        let theta = vec![0.0; spec.layout().len];
        let att = spec.moment_layout().post_att;
        // (T - T0) ell(t) Y_t
        assert_eq!(moment_q(&theta, 2, &p, &spec).unwrap()[att], -(2.0 * 0.25 * 4.0));
        assert_eq!(moment_q(&theta, 3, &p, &spec).unwrap()[att], -(2.0 * 0.75 * 6.0));
    }
}
