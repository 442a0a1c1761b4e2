//! Monte Carlo replication harness for bias and coverage studies.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::bridges::{BasisKind, InstrumentBasis};
use crate::dgp::{simulate, DgpConfig, Scenario};
use crate::error::{Error, Result};
use crate::gmm::{self, hac_meat, init_h_ols, Bandwidth, GmmOptions, HacOptions};
use crate::moments::{Method, MomentSpec};
use crate::normal;
use crate::panel::PanelData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum McMethod {
    #[serde(rename = "correct.DR")]
    CorrectDr,
    #[serde(rename = "correct.h")]
    CorrectH,
    #[serde(rename = "correct.q")]
    CorrectQ,
    #[serde(rename = "mis.h.DR")]
    MisHDr,
    #[serde(rename = "mis.q.DR")]
    MisQDr,
    #[serde(rename = "mis.h")]
    MisH,
    #[serde(rename = "mis.q")]
    MisQ,
    #[serde(rename = "OLS")]
    Ols,
}

impl McMethod {
    pub const ALL: [McMethod; 8] = [
        McMethod::CorrectDr,
        McMethod::CorrectH,
        McMethod::CorrectQ,
        McMethod::MisHDr,
        McMethod::MisQDr,
        McMethod::MisH,
        McMethod::MisQ,
        McMethod::Ols,
    ];

    pub fn label(self) -> &'static str {
        match self {
            McMethod::CorrectDr => "correct.DR",
            McMethod::CorrectH => "correct.h",
            McMethod::CorrectQ => "correct.q",
            McMethod::MisHDr => "mis.h.DR",
            McMethod::MisQDr => "mis.q.DR",
            McMethod::MisH => "mis.h",
            McMethod::MisQ => "mis.q",
            McMethod::Ols => "OLS",
        }
    }

    /// Moment specification for a simulated panel, `None` for OLS.
    ///
    /// Misspecified bridges keep only the first proxy: `h` on `w_1` with
    /// instruments `(1, z_1)`, or `q` on `z_1` with instruments `(1, w_1)`.
    pub fn moment_spec(self, panel: &PanelData, scenario: Scenario) -> Option<MomentSpec> {
        let method = match self {
            McMethod::CorrectDr | McMethod::MisHDr | McMethod::MisQDr => Method::DoublyRobust,
            McMethod::CorrectH | McMethod::MisH => Method::OutcomeOnly,
            McMethod::CorrectQ | McMethod::MisQ => Method::WeightingOnly,
            McMethod::Ols => return None,
        };
        let mut spec = MomentSpec::new(method, panel);
        if scenario == Scenario::OverIdentified {
            spec.gq = InstrumentBasis::all(BasisKind::Poly2, panel.dw());
        }
        if matches!(self, McMethod::MisHDr | McMethod::MisH) {
            spec.h_columns = vec![0];
            spec.gh = InstrumentBasis::new(BasisKind::Affine, vec![0]);
        }
        if matches!(self, McMethod::MisQDr | McMethod::MisQ) {
            spec.q_columns = vec![0];
            spec.gq = InstrumentBasis::new(BasisKind::Affine, vec![0]);
        }
        Some(spec)
    }
}

impl FromStr for McMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        McMethod::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown Monte Carlo method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum McScenario {
    JustIdentified,
    OverIdentified,
}

impl FromStr for McScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "just" | "just_identified" => Ok(McScenario::JustIdentified),
            "over" | "over_identified" => Ok(McScenario::OverIdentified),
            other => Err(Error::Validation(format!("unknown scenario `{other}` (expected just or over)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McDesign {
    pub scenario: McScenario,
    pub t_grid: Vec<usize>,
    /// Number of confounders; ignored by the over-identified design.
    pub k_grid: Vec<usize>,
    pub reps: usize,
    pub methods: Vec<McMethod>,
    /// Replication `r` (zero-based) simulates with seed `base_seed + r`.
    pub base_seed: u64,
    pub ci_level: f64,
    pub gmm: GmmOptions,
    /// Rayon worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    /// Standardize the latent process before the copula transform.
    pub standardize: bool,
}

impl Default for McDesign {
    fn default() -> Self {
        McDesign {
            scenario: McScenario::JustIdentified,
            t_grid: vec![500, 1000, 2000, 4000],
            k_grid: vec![2, 3, 4, 5],
            reps: 200,
            methods: McMethod::ALL.to_vec(),
            base_seed: 1,
            ci_level: 0.95,
            gmm: GmmOptions::default(),
            workers: None,
            standardize: true,
        }
    }
}

impl McDesign {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Validation("reps must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Validation("at least one method is required".into()));
        }
        if self.t_grid.is_empty() || (self.scenario == McScenario::JustIdentified && self.k_grid.is_empty()) {
            return Err(Error::Validation("T and K grids must be nonempty".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Validation(format!("CI level {} outside (0, 1)", self.ci_level)));
        }
        if self.workers == Some(0) {
            return Err(Error::Validation("workers must be at least 1".into()));
        }
        for cfg in self.cells().into_iter().map(|(t, k)| self.dgp(t, k, 0)) {
            cfg.validate()?;
        }
        Ok(())
    }

    fn cells(&self) -> Vec<(usize, usize)> {
        let ks = match self.scenario {
            McScenario::JustIdentified => self.k_grid.clone(),
            McScenario::OverIdentified => vec![3],
        };
        let mut cells = Vec::new();
        for &t in &self.t_grid {
            for &k in &ks {
                cells.push((t, k));
            }
        }
        cells
    }

    fn dgp(&self, t: usize, k: usize, rep: usize) -> DgpConfig {
        let seed = self.base_seed.wrapping_add(rep as u64);
        let mut cfg = match self.scenario {
            McScenario::JustIdentified => DgpConfig::just_identified(k, t, seed),
            McScenario::OverIdentified => DgpConfig::over_identified(t, seed),
        };
        cfg.standardize = self.standardize;
        cfg
    }
}

/// One method on one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRecord {
    pub method: McMethod,
    pub t: usize,
    pub k: usize,
    pub rep: usize,
    pub seed: u64,
    pub estimate: f64,
    pub se: f64,
    /// Empty (`None`) when the fit failed.
    pub ci: Option<(f64, f64)>,
    pub converged: bool,
    pub objective: f64,
    pub error: Option<String>,
}

impl McRecord {
    pub fn covers(&self, truth: f64) -> bool {
        self.ci.is_some_and(|(lo, hi)| lo <= truth && truth <= hi)
    }

    fn ok(&self) -> bool {
        self.converged && self.estimate.is_finite()
    }
}

/// Summary of one (method, T, K) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McCell {
    pub method: McMethod,
    pub t: usize,
    pub k: usize,
    pub reps: usize,
    pub failures: usize,
    /// Mean and SD over successful replications.
    pub mean: f64,
    pub bias: f64,
    pub sd: f64,
    /// Monte Carlo standard error of `mean`.
    pub mc_se: f64,
    pub median_se: f64,
    /// Failed replications count as non-coverage.
    pub coverage: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub median_objective: f64,
    pub max_objective: f64,
    /// Estimate quantiles at 5, 25, 50, 75 and 95 percent.
    pub quantiles: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub att_true: f64,
    pub ci_level: f64,
    pub cells: Vec<McCell>,
    /// Ordered by (method, T, K, replication).
    pub records: Vec<McRecord>,
}

impl McReport {
    pub fn cell(&self, method: McMethod, t: usize, k: usize) -> Option<&McCell> {
        self.cells.iter().find(|c| c.method == method && c.t == t && c.k == k)
    }

    /// Delimited summary table, one row per cell.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "method,T,K,reps,failures,mean,bias,sd,mc_se,median_se,coverage,wilson_lo,wilson_hi,median_objective,max_objective\n",
        );
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.method.label(),
                c.t,
                c.k,
                c.reps,
                c.failures,
                c.mean,
                c.bias,
                c.sd,
                c.mc_se,
                c.median_se,
                c.coverage,
                c.wilson_lo,
                c.wilson_hi,
                c.median_objective,
                c.max_objective
            );
        }
        out
    }

    /// Plot data: estimate quantiles with coverage and Wilson bounds.
    pub fn plot_csv(&self) -> String {
        let mut out = String::from("method,T,K,q05,q25,q50,q75,q95,coverage,wilson_lo,wilson_hi\n");
        for c in &self.cells {
            let q = c.quantiles;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.method.label(),
                c.t,
                c.k,
                q[0],
                q[1],
                q[2],
                q[3],
                q[4],
                c.coverage,
                c.wilson_lo,
                c.wilson_hi
            );
        }
        out
    }

    /// Every replication, for external analysis.
    pub fn records_csv(&self) -> String {
        let mut out = String::from("method,T,K,rep,seed,estimate,se,ci_lo,ci_hi,converged,objective\n");
        for r in &self.records {
            let (lo, hi) = r.ci.unwrap_or((f64::NAN, f64::NAN));
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.method.label(),
                r.t,
                r.k,
                r.rep,
                r.seed,
                r.estimate,
                r.se,
                lo,
                hi,
                r.converged,
                r.objective
            );
        }
        out
    }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, n: usize, level: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::Domain("Wilson interval needs n >= 1".into()));
    }
    if successes > n {
        return Err(Error::Domain(format!("{successes} successes out of {n} trials")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("level {level} outside (0, 1)")));
    }
    let z = normal::two_sided_critical(level);
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == n { 1.0 } else { (center + half).min(1.0) };
    Ok((lo, hi))
}

/// Pre-period OLS bridge, ATT as the post-period mean residual, and SE from
/// the centered HAC long-run variance of the post-period residuals.
pub fn ols_att(panel: &PanelData, bandwidth: Bandwidth, level: f64) -> Result<(f64, f64, Option<(f64, f64)>)> {
    let ols = init_h_ols(panel)?;
    let n_post = panel.n_post();
    let resid: Vec<f64> = (panel.t0()..panel.n_periods())
        .map(|t| ols.params.eval(panel.w_row(t)).map(|h| panel.y()[t] - h))
        .collect::<Result<_>>()?;
    let att = resid.iter().sum::<f64>() / n_post as f64;
    let series = nalgebra::DMatrix::from_column_slice(n_post, 1, &resid);
    let opts = HacOptions {
        bandwidth,
        centered: true,
        ..Default::default()
    };
    let lrv = hac_meat(&series, &opts)?.matrix[(0, 0)];
    let se = (lrv.max(0.0) / n_post as f64).sqrt();
    Ok((att, se, gmm::wald_interval(att, se, level)))
}

fn run_method(method: McMethod, panel: &PanelData, scenario: Scenario, design: &McDesign) -> (f64, f64, Option<(f64, f64)>, bool, f64, Option<String>) {
    let Some(spec) = method.moment_spec(panel, scenario) else {
        return match ols_att(panel, design.gmm.hac.bandwidth, design.ci_level) {
            Ok((att, se, ci)) => (att, se, ci, true, 0.0, None),
            Err(e) => (f64::NAN, f64::NAN, None, false, f64::NAN, Some(e.to_string())),
        };
    };
    let opts = GmmOptions {
        ci_level: design.ci_level,
        ..design.gmm.clone()
    };
    match gmm::fit(panel, &spec, &opts, None) {
        Ok(f) => (f.att_estimate, f.att_se, f.att_ci, f.converged, f.objective_value, None),
        Err(e) => (f64::NAN, f64::NAN, None, false, f64::NAN, Some(e.to_string())),
    }
}

fn replicate(design: &McDesign, t: usize, k: usize, rep: usize) -> Vec<McRecord> {
    let cfg = design.dgp(t, k, rep);
    let sim = simulate(&cfg);
    design
        .methods
        .iter()
        .map(|&method| {
            let (estimate, se, ci, converged, objective, error) = match &sim {
                Ok(s) => run_method(method, &s.panel, cfg.scenario, design),
                Err(e) => (f64::NAN, f64::NAN, None, false, f64::NAN, Some(e.to_string())),
            };
            McRecord {
                method,
                t,
                k,
                rep,
                seed: cfg.seed,
                estimate,
                se,
                ci: if converged { ci } else { None },
                converged,
                objective,
                error,
            }
        })
        .collect()
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_finite(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    v
}

fn summarize(records: &[McRecord], truth: f64, level: f64) -> Result<McCell> {
    let first = &records[0];
    let ok: Vec<&McRecord> = records.iter().filter(|r| r.ok()).collect();
    let n_ok = ok.len();
    let mean = ok.iter().map(|r| r.estimate).sum::<f64>() / n_ok as f64;
    let sd = if n_ok > 1 {
        (ok.iter().map(|r| (r.estimate - mean).powi(2)).sum::<f64>() / (n_ok - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    let covered = records.iter().filter(|r| r.covers(truth)).count();
    let (wilson_lo, wilson_hi) = wilson_interval(covered, records.len(), level)?;
    let est = sorted_finite(ok.iter().map(|r| r.estimate));
    let ses = sorted_finite(ok.iter().map(|r| r.se));
    let objs = sorted_finite(ok.iter().map(|r| r.objective));
    Ok(McCell {
        method: first.method,
        t: first.t,
        k: first.k,
        reps: records.len(),
        failures: records.len() - n_ok,
        mean,
        bias: mean - truth,
        sd,
        mc_se: sd / (n_ok as f64).sqrt(),
        median_se: quantile_sorted(&ses, 0.5),
        coverage: covered as f64 / records.len() as f64,
        wilson_lo,
        wilson_hi,
        median_objective: quantile_sorted(&objs, 0.5),
        max_objective: objs.last().copied().unwrap_or(f64::NAN),
        quantiles: [0.05, 0.25, 0.5, 0.75, 0.95].map(|p| quantile_sorted(&est, p)),
    })
}

pub fn run_mc(design: &McDesign) -> Result<McReport> {
    design.validate()?;
    let tasks: Vec<(usize, usize, usize)> = design
        .cells()
        .into_iter()
        .flat_map(|(t, k)| (0..design.reps).map(move |r| (t, k, r)))
        .collect();
    let work = || -> Vec<Vec<McRecord>> { tasks.par_iter().map(|&(t, k, r)| replicate(design, t, k, r)).collect() };
    let per_task = match design.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Validation(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };

    let mut records: Vec<McRecord> = per_task.into_iter().flatten().collect();
    let method_rank = |m: McMethod| design.methods.iter().position(|&x| x == m).unwrap_or(usize::MAX);
    records.sort_by_key(|r| (method_rank(r.method), r.t, r.k, r.rep));

    let att_true = design.dgp(design.t_grid[0], design.cells()[0].1, 0).att_true;
    let mut cells = Vec::new();
    for chunk in records.chunk_by(|a, b| a.method == b.method && a.t == b.t && a.k == b.k) {
        cells.push(summarize(chunk, att_true, design.ci_level)?);
    }
    Ok(McReport {
        att_true,
        ci_level: design.ci_level,
        cells,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson_interval(0, 10, 0.95).unwrap();
        assert!(lo == 0.0 && (hi - 0.2775).abs() < 1e-3);
        let (lo, hi) = wilson_interval(10, 10, 0.95).unwrap();
        assert!((lo - 0.7225).abs() < 1e-3 && hi == 1.0);
        let (lo, hi) = wilson_interval(5, 10, 0.95).unwrap();
        assert!(((lo + hi) / 2.0 - 0.5).abs() < 1e-12 && lo < 0.5 && hi > 0.5);
        assert!(wilson_interval(0, 0, 0.95).is_err());
    }

    #[test]
    fn method_labels_round_trip() {
        for m in McMethod::ALL {
            assert_eq!(m.label().parse::<McMethod>().unwrap(), m);
        }
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
    }

    #[test]
    fn single_replication_is_well_formed() {
        let design = McDesign {
            t_grid: vec![200],
            k_grid: vec![2],
            reps: 1,
            ..Default::default()
        };
        let report = run_mc(&design).unwrap();
        assert_eq!(report.records.len(), 8);
        assert_eq!(report.cells.len(), 8);
        assert_eq!(report.summary_csv().lines().count(), 9);
        for c in &report.cells {
            assert!(c.wilson_lo <= c.coverage && c.coverage <= c.wilson_hi);
        }
    }
}
