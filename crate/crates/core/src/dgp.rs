//! Simulation designs with latent exponential confounders linked over time
//! by a Gaussian copula, plus the bridge functions they imply.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::bridges::{OutcomeBridgeParams, TreatmentBridgeParams};
use crate::error::{Error, Result};
use crate::normal;
use crate::panel::PanelData;
use crate::rng::Stream;

pub const MAX_K: usize = 8;

/// Over-identified design: donor loadings on the three confounders.
pub const OVERID_W_LOADINGS: [[f64; 3]; 5] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 1.0],
];

/// Over-identified design: supplemental-proxy loadings.
pub const OVERID_Z_LOADINGS: [[f64; 3]; 10] = [
    [2.0, 0.0, 0.0],
    [0.0, 2.0, 0.0],
    [0.0, 0.0, 2.0],
    [-3.0, 0.0, 0.0],
    [0.0, -3.0, 0.0],
    [0.0, 0.0, -3.0],
    [1.0, -1.0, 0.0],
    [1.0, 0.0, -1.0],
    [0.0, 1.0, -1.0],
    [2.0, -0.5, -0.5],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    /// `K` confounders, one donor and one supplemental proxy each.
    JustIdentified { k: usize },
    /// Three confounders, five donors, ten supplemental proxies.
    OverIdentified,
}

impl Scenario {
    pub fn latent_dim(self) -> usize {
        match self {
            Scenario::JustIdentified { k } => k,
            Scenario::OverIdentified => 3,
        }
    }

    pub fn donor_dim(self) -> usize {
        match self {
            Scenario::JustIdentified { k } => k,
            Scenario::OverIdentified => OVERID_W_LOADINGS.len(),
        }
    }

    pub fn supplemental_dim(self) -> usize {
        match self {
            Scenario::JustIdentified { k } => k,
            Scenario::OverIdentified => OVERID_Z_LOADINGS.len(),
        }
    }

    /// Donor loadings, one row per donor.
    pub fn w_loadings(self) -> DMatrix<f64> {
        match self {
            Scenario::JustIdentified { k } => DMatrix::identity(k, k) * 2.0,
            Scenario::OverIdentified => DMatrix::from_fn(5, 3, |i, j| OVERID_W_LOADINGS[i][j]),
        }
    }

    /// Supplemental-proxy loadings, one row per proxy.
    pub fn z_loadings(self) -> DMatrix<f64> {
        match self {
            Scenario::JustIdentified { k } => DMatrix::identity(k, k) * 2.0,
            Scenario::OverIdentified => DMatrix::from_fn(10, 3, |i, j| OVERID_Z_LOADINGS[i][j]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DgpConfig {
    pub scenario: Scenario,
    pub n_periods: usize,
    /// Last pre-treatment period; `None` means `n_periods / 2`.
    pub t0: Option<usize>,
    pub seed: u64,
    pub ar_coef: f64,
    pub innov_coef: f64,
    /// Exponential rate of each confounder before treatment.
    pub rate_pre: f64,
    /// Exponential rate after treatment.
    pub rate_post: f64,
    pub att_true: f64,
    /// Scale the latent Gaussian process to unit variance before the copula
    /// transform, so the confounders have exact exponential marginals.
    /// When false, `Phi` is applied to the raw AR values.
    pub standardize: bool,
}

impl DgpConfig {
    pub fn just_identified(k: usize, n_periods: usize, seed: u64) -> Self {
        DgpConfig {
            scenario: Scenario::JustIdentified { k },
            n_periods,
            t0: None,
            seed,
            ar_coef: 0.1,
            innov_coef: 0.9,
            rate_pre: 1.0,
            rate_post: 2.0,
            att_true: 2.0,
            standardize: true,
        }
    }

    pub fn over_identified(n_periods: usize, seed: u64) -> Self {
        DgpConfig {
            scenario: Scenario::OverIdentified,
            ..Self::just_identified(3, n_periods, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Scenario::JustIdentified { k } = self.scenario {
            if !(1..=MAX_K).contains(&k) {
                return Err(Error::Validation(format!("K = {k} unsupported (expected 1..={MAX_K})")));
            }
        }
        if self.t0.is_none() && self.n_periods % 2 != 0 {
            return Err(Error::Validation(format!(
                "T = {} must be even when T0 is not given",
                self.n_periods
            )));
        }
        let t0 = self.t0();
        if self.n_periods < 2 || t0 == 0 || t0 >= self.n_periods {
            return Err(Error::Validation(format!(
                "need 1 <= T0 < T, got T0 = {t0}, T = {}",
                self.n_periods
            )));
        }
        if !(self.rate_pre > 0.0 && self.rate_post > 0.0 && self.rate_pre.is_finite() && self.rate_post.is_finite()) {
            return Err(Error::Validation("exponential rates must be positive and finite".into()));
        }
        if !(self.ar_coef.is_finite() && self.innov_coef.is_finite() && self.att_true.is_finite()) {
            return Err(Error::Validation("DGP coefficients must be finite".into()));
        }
        if self.innov_coef == 0.0 {
            return Err(Error::Validation("innovation coefficient must be nonzero".into()));
        }
        Ok(())
    }

    pub fn t0(&self) -> usize {
        self.t0.unwrap_or(self.n_periods / 2)
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub panel: PanelData,
    /// Confounders, `T x dU`. For verification only.
    pub latent_u: DMatrix<f64>,
    /// The latent Gaussian AR process before the copula transform, `T x dU`.
    pub latent_gaussian: DMatrix<f64>,
    pub att_true: f64,
}

/// Exponential quantile at `Phi(x)`, accurate in both tails.
fn exp_from_gaussian(x: f64, rate: f64) -> f64 {
    -normal::sf(x).ln() / rate
}

pub fn simulate(config: &DgpConfig) -> Result<SimulatedPanel> {
    config.validate()?;
    let n = config.n_periods;
    let t0 = config.t0();
    let du = config.scenario.latent_dim();
    let dw = config.scenario.donor_dim();
    let dz = config.scenario.supplemental_dim();
    let a = config.scenario.w_loadings();
    let b = config.scenario.z_loadings();

    let mut stream = Stream::new(config.seed);
    let mut gauss = DMatrix::zeros(n, du);
    let mut latent = DMatrix::zeros(n, du);
    let mut y = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n * dw);
    let mut z = Vec::with_capacity(n * dz);
    let mut prev = vec![0.0; du];
    let mut var = 1.0;
    let mut u = DVector::zeros(du);
    for t in 0..n {
        if t > 0 {
            var = config.ar_coef * config.ar_coef * var + config.innov_coef * config.innov_coef;
        }
        let sd = if config.standardize { var.sqrt() } else { 1.0 };
        let rate = if t < t0 { config.rate_pre } else { config.rate_post };
        for k in 0..du {
            let eps = stream.normal();
            let g = if t == 0 {
                eps
            } else {
                config.ar_coef * prev[k] + config.innov_coef * eps
            };
            prev[k] = g;
            gauss[(t, k)] = g;
            u[k] = exp_from_gaussian(g / sd, rate);
            latent[(t, k)] = u[k];
        }
        let treated = if t < t0 { 0.0 } else { config.att_true };
        y.push(treated + 2.0 * u.sum() + stream.symmetric(1.0));
        for i in 0..dw {
            w.push(a.row(i).dot(&u.transpose()) + stream.symmetric(1.0));
        }
        for i in 0..dz {
            z.push(b.row(i).dot(&u.transpose()) + stream.symmetric(1.0));
        }
    }
    Ok(SimulatedPanel {
        panel: PanelData::new(y, w, dw, z, dz, t0)?,
        latent_u: latent,
        latent_gaussian: gauss,
        att_true: config.att_true,
    })
}

/// Minimum-norm `x` with `m' x = target`.
fn min_norm_solution(m: &DMatrix<f64>, target: &DVector<f64>) -> DVector<f64> {
    // x = m (m' m)^{-1} target; m' m is 3x3 and positive definite when the
    // loadings span the latent space
    let gram = m.transpose() * m;
    let coef = gram.cholesky().expect("loadings span the latent space").solve(target);
    m * coef
}

/// Outcome bridge `h*(w) = alpha_0 + alpha' w` implied by the design.
pub fn oracle_outcome_bridge(config: &DgpConfig) -> Result<OutcomeBridgeParams> {
    config.validate()?;
    let du = config.scenario.latent_dim();
    let slopes = match config.scenario {
        Scenario::JustIdentified { k } => DVector::from_element(k, 1.0),
        Scenario::OverIdentified => min_norm_solution(&config.scenario.w_loadings(), &DVector::from_element(du, 2.0)),
    };
    let mut alpha = Vec::with_capacity(slopes.len() + 1);
    alpha.push(0.0);
    alpha.extend(slopes.iter());
    Ok(OutcomeBridgeParams::new(alpha))
}

/// `E[exp(c V)]` for `V ~ Unif(-1, 1)`.
fn sinhc(c: f64) -> f64 {
    if c.abs() < 1e-8 {
        1.0 + c * c / 6.0
    } else {
        c.sinh() / c
    }
}

/// Treatment bridge `q*(z) = exp(beta_0 + beta' z)` implied by the design.
///
/// The slopes solve `sum_k beta_k b_k = -(rate_post - rate_pre) 1` (minimum
/// norm when the proxies outnumber the confounders) and the intercept makes
/// `E[q*(Z) | U = u]` equal the pre-to-post density ratio of `U`.
pub fn oracle_treatment_bridge(config: &DgpConfig) -> Result<TreatmentBridgeParams> {
    config.validate()?;
    let du = config.scenario.latent_dim();
    let shift = config.rate_post - config.rate_pre;
    let slopes = match config.scenario {
        Scenario::JustIdentified { k } => DVector::from_element(k, -shift / 2.0),
        Scenario::OverIdentified => min_norm_solution(&config.scenario.z_loadings(), &DVector::from_element(du, -shift)),
    };
    let log_ratio = (config.rate_post / config.rate_pre).ln();
    let intercept = du as f64 * log_ratio - slopes.iter().map(|&c| sinhc(c).ln()).sum::<f64>();
    let mut beta = Vec::with_capacity(slopes.len() + 1);
    beta.push(intercept);
    beta.extend(slopes.iter());
    Ok(TreatmentBridgeParams::new(beta))
}

/// Post-to-pre density ratio of the confounders at `u`.
pub fn density_ratio_oracle(u: &[f64], config: &DgpConfig) -> Result<f64> {
    let du = config.scenario.latent_dim();
    if u.len() != du {
        return Err(Error::dim(du, u.len(), "confounder vector"));
    }
    if let Some(v) = u.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("confounders are nonnegative, got {v}")));
    }
    let (r1, r2) = (config.rate_pre, config.rate_post);
    let log = du as f64 * (r2 / r1).ln() - (r2 - r1) * u.iter().sum::<f64>();
    Ok(log.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_panel() {
        let cfg = DgpConfig::just_identified(2, 200, 7);
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a.panel, b.panel);
        let other = simulate(&DgpConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.panel, other.panel);
    }

    #[test]
    fn shapes() {
        let s = simulate(&DgpConfig::over_identified(50, 1)).unwrap();
        assert_eq!((s.panel.dw(), s.panel.dz(), s.panel.t0()), (5, 10, 25));
        assert_eq!(s.latent_u.shape(), (50, 3));
    }

    #[test]
    fn config_validation() {
        assert!(DgpConfig::just_identified(0, 100, 1).validate().is_err());
        assert!(DgpConfig::just_identified(9, 100, 1).validate().is_err());
        assert!(DgpConfig::just_identified(2, 101, 1).validate().is_err());
        let odd = DgpConfig {
            t0: Some(50),
            ..DgpConfig::just_identified(2, 101, 1)
        };
        assert!(odd.validate().is_ok());
    }

    #[test]
    fn oracle_bridges_just_identified() {
        let cfg = DgpConfig::just_identified(3, 100, 1);
        assert_eq!(oracle_outcome_bridge(&cfg).unwrap().alpha, vec![0.0, 1.0, 1.0, 1.0]);
        let beta = oracle_treatment_bridge(&DgpConfig::just_identified(1, 100, 1)).unwrap().beta;
        assert!((beta[0] - 0.651_825).abs() < 1e-5 && beta[1] == -0.5);
    }

    #[test]
    fn density_ratio_examples() {
        let cfg = DgpConfig::just_identified(2, 100, 1);
        assert!((density_ratio_oracle(&[0.0, 0.0], &cfg).unwrap() - 4.0).abs() < 1e-14);
        let l = 4f64.ln();
        assert!((density_ratio_oracle(&[l / 2.0, l / 2.0], &cfg).unwrap() - 1.0).abs() < 1e-14);
        assert!(matches!(density_ratio_oracle(&[-0.1, 0.0], &cfg), Err(Error::Domain(_))));
    }
}
