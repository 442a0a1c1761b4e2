//! Parametric confounding bridge families and instrument bases.
//!
//! The outcome bridge is linear with intercept, `h(w) = a0 + a·w_S`, and the
//! treatment bridge is log-linear, `q(z) = exp(b0 + b·z_S)`, where `S` selects
//! a subset of the proxy columns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bound on the log-linear predictor before exponentiation.
pub const ETA_CLAMP: f64 = 50.0;

/// Coefficients of `h(w) = alpha[0] + sum_j alpha[1 + j] * w[columns[j]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeBridgeParams {
    pub alpha: Vec<f64>,
    pub columns: Vec<usize>,
}

impl OutcomeBridgeParams {
    /// Uses donor columns `0..alpha.len() - 1`.
    pub fn new(alpha: Vec<f64>) -> Self {
        let columns = (0..alpha.len().saturating_sub(1)).collect();
        OutcomeBridgeParams { alpha, columns }
    }

    pub fn on_columns(alpha: Vec<f64>, columns: Vec<usize>) -> Result<Self> {
        check_subset(&columns, alpha.len(), "outcome bridge")?;
        Ok(OutcomeBridgeParams { alpha, columns })
    }

    /// Evaluates on a full donor row.
    pub fn eval(&self, w: &[f64]) -> Result<f64> {
        check_row(&self.columns, w.len(), "donor row")?;
        Ok(eval_linear(&self.alpha, &self.columns, w))
    }
}

/// Coefficients of `q(z) = exp(beta[0] + sum_j beta[1 + j] * z[columns[j]])`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentBridgeParams {
    pub beta: Vec<f64>,
    pub columns: Vec<usize>,
}

impl TreatmentBridgeParams {
    pub fn new(beta: Vec<f64>) -> Self {
        let columns = (0..beta.len().saturating_sub(1)).collect();
        TreatmentBridgeParams { beta, columns }
    }

    pub fn on_columns(beta: Vec<f64>, columns: Vec<usize>) -> Result<Self> {
        check_subset(&columns, beta.len(), "treatment bridge")?;
        Ok(TreatmentBridgeParams { beta, columns })
    }

    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        check_row(&self.columns, z.len(), "supplemental row")?;
        Ok(eval_loglinear(&self.beta, &self.columns, z).0)
    }

    /// Clamped linear predictor, i.e. `ln q(z)`.
    pub fn log_eval(&self, z: &[f64]) -> Result<f64> {
        check_row(&self.columns, z.len(), "supplemental row")?;
        Ok(clamp_eta(eval_linear(&self.beta, &self.columns, z)).0)
    }
}

fn check_subset(columns: &[usize], ncoef: usize, what: &'static str) -> Result<()> {
    if ncoef != columns.len() + 1 {
        return Err(Error::dim(columns.len() + 1, ncoef, what));
    }
    if columns.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::Validation(format!("{what}: column indices must be strictly increasing")));
    }
    Ok(())
}

fn check_row(columns: &[usize], len: usize, what: &'static str) -> Result<()> {
    match columns.last() {
        Some(&c) if c >= len => Err(Error::dim(c + 1, len, what)),
        _ => Ok(()),
    }
}

/// `coef[0] + sum_j coef[1 + j] * x[columns[j]]`.
#[inline]
pub(crate) fn eval_linear(coef: &[f64], columns: &[usize], x: &[f64]) -> f64 {
    let mut acc = coef[0];
    for (c, &j) in coef[1..].iter().zip(columns) {
        acc += c * x[j];
    }
    acc
}

#[inline]
pub(crate) fn clamp_eta(eta: f64) -> (f64, bool) {
    if eta > ETA_CLAMP {
        (ETA_CLAMP, true)
    } else if eta < -ETA_CLAMP {
        (-ETA_CLAMP, true)
    } else {
        (eta, false)
    }
}

/// Returns `(q, clamped)`.
#[inline]
pub(crate) fn eval_loglinear(coef: &[f64], columns: &[usize], x: &[f64]) -> (f64, bool) {
    let (eta, clamped) = clamp_eta(eval_linear(coef, columns, x));
    (eta.exp(), clamped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    /// `(1, x)`.
    Affine,
    /// Intercept, linear terms, squares, then pairwise products.
    Poly2,
}

impl BasisKind {
    pub fn output_dim(self, d: usize) -> usize {
        match self {
            BasisKind::Affine => 1 + d,
            BasisKind::Poly2 => 1 + 2 * d + d * d.saturating_sub(1) / 2,
        }
    }
}

impl std::str::FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affine" => Ok(BasisKind::Affine),
            "poly2" => Ok(BasisKind::Poly2),
            other => Err(Error::Validation(format!("unknown basis `{other}` (expected affine or poly2)"))),
        }
    }
}

/// An instrument function applied to selected proxy columns.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentBasis {
    pub kind: BasisKind,
    pub columns: Vec<usize>,
}

impl InstrumentBasis {
    pub fn new(kind: BasisKind, columns: Vec<usize>) -> Self {
        InstrumentBasis { kind, columns }
    }

    pub fn all(kind: BasisKind, d: usize) -> Self {
        InstrumentBasis::new(kind, (0..d).collect())
    }

    pub fn input_dim(&self) -> usize {
        self.columns.len()
    }

    pub fn output_dim(&self) -> usize {
        self.kind.output_dim(self.columns.len())
    }

    /// Evaluates on a full proxy row, writing `output_dim()` values into `out`.
    #[inline]
    pub(crate) fn eval_row_into(&self, row: &[f64], out: &mut [f64]) {
        let d = self.columns.len();
        out[0] = 1.0;
        for (i, &c) in self.columns.iter().enumerate() {
            out[1 + i] = row[c];
        }
        if self.kind == BasisKind::Poly2 {
            for i in 0..d {
                out[1 + d + i] = out[1 + i] * out[1 + i];
            }
            let mut k = 1 + 2 * d;
            for i in 0..d {
                for j in i + 1..d {
                    out[k] = out[1 + i] * out[1 + j];
                    k += 1;
                }
            }
        }
    }

    pub fn eval_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        check_row(&self.columns, row.len(), "instrument input row")?;
        let mut out = vec![0.0; self.output_dim()];
        self.eval_row_into(row, &mut out);
        Ok(out)
    }
}

/// Evaluates basis `kind` on an already-selected input vector `x`.
pub fn basis(kind: BasisKind, x: &[f64]) -> Vec<f64> {
    let b = InstrumentBasis::all(kind, x.len());
    let mut out = vec![0.0; b.output_dim()];
    b.eval_row_into(x, &mut out);
    out
}

/// `h_alpha(w)` with `alpha` acting on all donor columns in order.
pub fn eval_h(alpha: &[f64], w: &[f64]) -> Result<f64> {
    if alpha.len() != w.len() + 1 {
        return Err(Error::dim(w.len() + 1, alpha.len(), "outcome bridge coefficients"));
    }
    Ok(OutcomeBridgeParams::new(alpha.to_vec()).eval(w)?)
}

/// `q_beta(z)` with `beta` acting on all supplied columns in order.
pub fn eval_q(beta: &[f64], z: &[f64]) -> Result<f64> {
    if beta.len() != z.len() + 1 {
        return Err(Error::dim(z.len() + 1, beta.len(), "treatment bridge coefficients"));
    }
    TreatmentBridgeParams::new(beta.to_vec()).eval(z)
}
