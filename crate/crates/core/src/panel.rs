//! Panel data for a single treated unit: observed outcome `y`, donor proxies
//! `w` and supplemental proxies `z`, split at the last pre-treatment period.
//!
//! Rows are time periods. Matrices are stored row-major so that one period's
//! proxies are a contiguous slice. Missing supplemental cells (only allowed
//! after the split) are stored as NaN.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    times: Vec<f64>,
    t0: usize,
    y: Vec<f64>,
    w: Vec<f64>,
    z: Vec<f64>,
    dw: usize,
    dz: usize,
    labels: Labels,
}

/// Column names used when a panel is written back to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub time: String,
    pub treated: String,
    pub donors: Vec<String>,
    pub supplemental: Vec<String>,
}

impl Labels {
    pub fn generic(dw: usize, dz: usize) -> Self {
        Labels {
            time: "t".into(),
            treated: "y".into(),
            donors: (1..=dw).map(|k| format!("w{k}")).collect(),
            supplemental: (1..=dz).map(|k| format!("z{k}")).collect(),
        }
    }
}

impl PanelData {
    /// Builds a panel from row-major proxy matrices. Time values default to 1..=T.
    pub fn new(y: Vec<f64>, w: Vec<f64>, dw: usize, z: Vec<f64>, dz: usize, t0: usize) -> Result<Self> {
        let n = y.len();
        let times = (1..=n).map(|t| t as f64).collect();
        Self::with_times(times, y, w, dw, z, dz, t0, Labels::generic(dw, dz))
    }

    /// Builds a panel from column-major `nalgebra` matrices (`T × dW`, `T × dZ`).
    pub fn from_matrices(y: &[f64], w: &DMatrix<f64>, z: &DMatrix<f64>, t0: usize) -> Result<Self> {
        let to_rows = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
        Self::new(y.to_vec(), to_rows(w), w.ncols(), to_rows(z), z.ncols(), t0)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_times(
        times: Vec<f64>,
        y: Vec<f64>,
        w: Vec<f64>,
        dw: usize,
        z: Vec<f64>,
        dz: usize,
        t0: usize,
        labels: Labels,
    ) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::Validation(format!("panel needs at least 2 periods, got {n}")));
        }
        if t0 < 1 || t0 >= n {
            return Err(Error::Validation(format!(
                "pre-treatment count T0={t0} must satisfy 1 <= T0 < T={n}"
            )));
        }
        if dw == 0 || dz == 0 {
            return Err(Error::Validation("need at least one donor and one supplemental column".into()));
        }
        if times.len() != n {
            return Err(Error::dim(n, times.len(), "time column length"));
        }
        if w.len() != n * dw {
            return Err(Error::dim(n * dw, w.len(), "donor matrix entries"));
        }
        if z.len() != n * dz {
            return Err(Error::dim(n * dz, z.len(), "supplemental matrix entries"));
        }
        if labels.donors.len() != dw || labels.supplemental.len() != dz {
            return Err(Error::Validation("label count does not match column count".into()));
        }
        if times.windows(2).any(|p| !(p[1] > p[0])) || times.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("time values must be finite and strictly increasing".into()));
        }
        for t in 0..n {
            if !y[t].is_finite() {
                return Err(Error::MissingValue {
                    row: t + 1,
                    column: labels.treated.clone(),
                });
            }
            for k in 0..dw {
                if !w[t * dw + k].is_finite() {
                    return Err(Error::MissingValue {
                        row: t + 1,
                        column: labels.donors[k].clone(),
                    });
                }
            }
            for k in 0..dz {
                let v = z[t * dz + k];
                if v.is_infinite() || (t < t0 && v.is_nan()) {
                    return Err(Error::MissingValue {
                        row: t + 1,
                        column: labels.supplemental[k].clone(),
                    });
                }
            }
        }
        Ok(PanelData {
            times,
            t0,
            y,
            w,
            z,
            dw,
            dz,
            labels,
        })
    }

    pub fn n_periods(&self) -> usize {
        self.y.len()
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn n_post(&self) -> usize {
        self.y.len() - self.t0
    }

    pub fn dw(&self) -> usize {
        self.dw
    }

    pub fn dz(&self) -> usize {
        self.dz
    }

    /// Zero-based period index `t` is pre-treatment iff `t < T0`.
    pub fn is_pre(&self, t: usize) -> bool {
        t < self.t0
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn w_row(&self, t: usize) -> &[f64] {
        &self.w[t * self.dw..(t + 1) * self.dw]
    }

    pub fn z_row(&self, t: usize) -> &[f64] {
        &self.z[t * self.dz..(t + 1) * self.dz]
    }

    pub fn z_observed(&self, t: usize) -> bool {
        self.z_row(t).iter().all(|v| !v.is_nan())
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn w_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_periods(), self.dw, &self.w)
    }

    pub fn z_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_periods(), self.dz, &self.z)
    }

    /// Resolves a supplemental column by label or 1-based position.
    pub fn supplemental_index(&self, key: &str) -> Result<usize> {
        resolve_column(key, &self.labels.supplemental)
    }

    fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> PanelData {
        let mut out = self.clone();
        for t in 0..self.n_periods() {
            out.y[t] = f(t, self.y[t]);
            for v in &mut out.w[t * self.dw..(t + 1) * self.dw] {
                *v = f(t, *v);
            }
            for v in &mut out.z[t * self.dz..(t + 1) * self.dz] {
                // NaN stays NaN.
                *v = f(t, *v);
            }
        }
        out
    }

    /// Writes the panel as comma-delimited text. Floats use the shortest
    /// representation that parses back to the same bits, missing cells are `NA`.
    pub fn to_delimited(&self) -> String {
        let mut out = String::new();
        let l = &self.labels;
        let header: Vec<&str> = std::iter::once(l.time.as_str())
            .chain(std::iter::once(l.treated.as_str()))
            .chain(l.donors.iter().map(String::as_str))
            .chain(l.supplemental.iter().map(String::as_str))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for t in 0..self.n_periods() {
            write!(out, "{},{}", self.times[t], self.y[t]).unwrap();
            for v in self.w_row(t) {
                write!(out, ",{v}").unwrap();
            }
            for v in self.z_row(t) {
                if v.is_nan() {
                    out.push_str(",NA");
                } else {
                    write!(out, ",{v}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }

    /// Layout that reads [`PanelData::to_delimited`] output back into this panel.
    pub fn layout(&self) -> Layout {
        Layout {
            time: self.labels.time.clone(),
            treated: self.labels.treated.clone(),
            donors: self.labels.donors.clone(),
            supplemental: self.labels.supplemental.clone(),
            split: Split::PreCount(self.t0),
        }
    }
}

fn resolve_column(key: &str, labels: &[String]) -> Result<usize> {
    if let Some(i) = labels.iter().position(|l| l == key) {
        return Ok(i);
    }
    match key.parse::<usize>() {
        Ok(i) if i >= 1 && i <= labels.len() => Ok(i - 1),
        _ => Err(Error::MissingColumn(key.to_string())),
    }
}

/// How the pre/post split is given in a layout.
#[derive(Debug, Clone, PartialEq)]
pub enum Split {
    /// Number of pre-treatment periods.
    PreCount(usize),
    /// Time value of the last pre-treatment period.
    LastPreTime(f64),
}

/// Maps file columns onto the panel roles.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub time: String,
    pub treated: String,
    pub donors: Vec<String>,
    pub supplemental: Vec<String>,
    pub split: Split,
}

impl Layout {
    /// Parses `key=value` lines. Keys: `time`, `treated`, `donors`,
    /// `supplemental` (comma lists), and one of `t0` or `last_pre_time`.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut time = None;
        let mut treated = None;
        let mut donors = None;
        let mut supplemental = None;
        let mut split = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Validation(format!("layout line {}: expected key=value", lineno + 1))
            })?;
            let value = value.trim();
            let list = || -> Vec<String> {
                value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            };
            match key.trim() {
                "time" => time = Some(value.to_string()),
                "treated" => treated = Some(value.to_string()),
                "donors" => donors = Some(list()),
                "supplemental" => supplemental = Some(list()),
                "t0" => {
                    let n = value
                        .parse()
                        .map_err(|_| Error::Validation(format!("layout: bad t0 `{value}`")))?;
                    split = Some(Split::PreCount(n));
                }
                "last_pre_time" => {
                    let v = value
                        .parse()
                        .map_err(|_| Error::Validation(format!("layout: bad last_pre_time `{value}`")))?;
                    split = Some(Split::LastPreTime(v));
                }
                other => return Err(Error::Validation(format!("layout: unknown key `{other}`"))),
            }
        }
        let need = |name: &str| Error::Validation(format!("layout: missing key `{name}`"));
        Ok(Layout {
            time: time.ok_or_else(|| need("time"))?,
            treated: treated.ok_or_else(|| need("treated"))?,
            donors: donors.ok_or_else(|| need("donors"))?,
            supplemental: supplemental.ok_or_else(|| need("supplemental"))?,
            split: split.ok_or_else(|| need("t0"))?,
        })
    }

    pub fn from_config_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_config_str(&text)
    }

    pub fn to_config_string(&self) -> String {
        let split = match self.split {
            Split::PreCount(n) => format!("t0={n}"),
            Split::LastPreTime(v) => format!("last_pre_time={v}"),
        };
        format!(
            "time={}\ntreated={}\ndonors={}\nsupplemental={}\n{}\n",
            self.time,
            self.treated,
            self.donors.join(","),
            self.supplemental.join(","),
            split
        )
    }

    fn validate(&self) -> Result<()> {
        if self.donors.is_empty() || self.supplemental.is_empty() {
            return Err(Error::Validation("layout needs at least one donor and one supplemental column".into()));
        }
        let mut all: Vec<&str> = vec![&self.time, &self.treated];
        all.extend(self.donors.iter().map(String::as_str));
        all.extend(self.supplemental.iter().map(String::as_str));
        let mut sorted = all.clone();
        sorted.sort_unstable();
        if let Some(dup) = sorted.windows(2).find(|p| p[0] == p[1]) {
            return Err(Error::Validation(format!("column `{}` assigned to more than one role", dup[0])));
        }
        Ok(())
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
}

fn unquote(cell: &str) -> &str {
    let c = cell.trim();
    c.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(c)
}

/// Reads a delimited panel file (comma or tab, detected from the header).
pub fn load_panel(path: &Path, layout: &Layout) -> Result<PanelData> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_panel(&text, layout)
}

pub fn parse_panel(text: &str, layout: &Layout) -> Result<PanelData> {
    layout.validate()?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Validation("file is empty; a header row is required".into()))?;
    let delim = if header.contains('\t') { '\t' } else { ',' };
    let columns: Vec<&str> = header.split(delim).map(unquote).collect();
    let find = |name: &str| -> Result<usize> {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let time_col = find(&layout.time)?;
    let y_col = find(&layout.treated)?;
    let w_cols = layout.donors.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
    let z_cols = layout.supplemental.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;

    let mut times = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    let mut z = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 1;
        let cells: Vec<&str> = line.split(delim).map(unquote).collect();
        if cells.len() != columns.len() {
            return Err(Error::Validation(format!(
                "row {row}: expected {} fields, found {}",
                columns.len(),
                cells.len()
            )));
        }
        let number = |col: usize, allow_missing: bool| -> Result<f64> {
            let cell = cells[col];
            if is_missing(cell) {
                return if allow_missing {
                    Ok(f64::NAN)
                } else {
                    Err(Error::MissingValue {
                        row,
                        column: columns[col].to_string(),
                    })
                };
            }
            cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                row,
                column: columns[col].to_string(),
                value: cell.to_string(),
            })
        };
        times.push(number(time_col, false)?);
        y.push(number(y_col, false)?);
        for &c in &w_cols {
            w.push(number(c, false)?);
        }
        for &c in &z_cols {
            z.push(number(c, true)?);
        }
    }
    if let Some(pos) = times.windows(2).position(|p| !(p[1] > p[0])) {
        return Err(Error::Validation(format!(
            "time column `{}` must be strictly increasing (row {})",
            layout.time,
            pos + 2
        )));
    }
    let t0 = match layout.split {
        Split::PreCount(n) => n,
        Split::LastPreTime(v) => times.iter().filter(|&&t| t <= v).count(),
    };
    let labels = Labels {
        time: layout.time.clone(),
        treated: layout.treated.clone(),
        donors: layout.donors.clone(),
        supplemental: layout.supplemental.clone(),
    };
    PanelData::with_times(
        times,
        y,
        w,
        layout.donors.len(),
        z,
        layout.supplemental.len(),
        t0,
        labels,
    )
}

/// Which rows contribute to the pooled trend fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DetrendScope {
    #[default]
    AllPeriods,
    PrePeriod,
}

/// Polynomial trend removed by [`detrend`]. Coefficients are in rescaled
/// time `s = (time - time_min) / time_span`, lowest degree first.
#[derive(Debug, Clone, PartialEq)]
pub struct DetrendInfo {
    pub degree: usize,
    pub coefficients: Vec<f64>,
    pub applied: bool,
    pub time_min: f64,
    pub time_span: f64,
    pub scope: DetrendScope,
}

impl DetrendInfo {
    pub fn trend_at(&self, time: f64) -> f64 {
        let s = (time - self.time_min) / self.time_span;
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * s + c)
    }
}

/// Removes one pooled polynomial trend, fitted to every control series, from
/// all series including the treated outcome.
pub fn detrend(panel: &PanelData, degree: usize) -> Result<(PanelData, DetrendInfo)> {
    detrend_with(panel, degree, DetrendScope::AllPeriods)
}

pub fn detrend_with(panel: &PanelData, degree: usize, scope: DetrendScope) -> Result<(PanelData, DetrendInfo)> {
    let ncoef = degree + 1;
    if ncoef > panel.t0() {
        return Err(Error::Validation(format!(
            "detrend degree {degree} needs at least {ncoef} pre-treatment periods, have {}",
            panel.t0()
        )));
    }
    let rows = match scope {
        DetrendScope::AllPeriods => panel.n_periods(),
        DetrendScope::PrePeriod => panel.t0(),
    };
    let time_min = panel.times[0];
    let time_span = panel.times[panel.n_periods() - 1] - time_min;

    // Stacked least squares over (t, value) pairs equals weighted least
    // squares on per-period means with weights = number of observed cells.
    let mut counts = Vec::with_capacity(rows);
    let mut sums = Vec::with_capacity(rows);
    for t in 0..rows {
        let mut n = 0usize;
        let mut s = 0.0;
        for &v in panel.w_row(t).iter().chain(panel.z_row(t)) {
            if !v.is_nan() {
                n += 1;
                s += v;
            }
        }
        counts.push(n);
        sums.push(s);
    }

    let coefficients = if degree == 0 {
        let n: usize = counts.iter().sum();
        vec![sums.iter().sum::<f64>() / n as f64]
    } else {
        let used: Vec<usize> = (0..rows).filter(|&t| counts[t] > 0).collect();
        if used.len() < ncoef {
            return Err(Error::Numerical(format!(
                "degree {degree} trend needs {ncoef} distinct time values, have {}",
                used.len()
            )));
        }
        let mut x = DMatrix::<f64>::zeros(used.len(), ncoef);
        let mut rhs = DVector::<f64>::zeros(used.len());
        for (r, &t) in used.iter().enumerate() {
            let sw = (counts[t] as f64).sqrt();
            let s = (panel.times[t] - time_min) / time_span;
            let mut p = 1.0;
            for j in 0..ncoef {
                x[(r, j)] = sw * p;
                p *= s;
            }
            rhs[r] = sums[t] / counts[t] as f64 * sw;
        }
        let qr = x.qr();
        let rmat = qr.r();
        let max_diag = (0..ncoef).map(|i| rmat[(i, i)].abs()).fold(0.0, f64::max);
        if (0..ncoef).any(|i| rmat[(i, i)].abs() <= 1e-10 * max_diag) {
            return Err(Error::Numerical(format!("trend design of degree {degree} is rank deficient")));
        }
        let qtb = qr.q().transpose() * rhs;
        let coef = rmat
            .solve_upper_triangular(&qtb)
            .ok_or_else(|| Error::Numerical("triangular solve failed in trend fit".into()))?;
        coef.iter().copied().collect()
    };
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("trend coefficients are not finite".into()));
    }
    let info = DetrendInfo {
        degree,
        coefficients,
        applied: true,
        time_min,
        time_span,
        scope,
    };
    let trend: Vec<f64> = panel.times.iter().map(|&t| info.trend_at(t)).collect();
    Ok((panel.map_values(|t, v| v - trend[t]), info))
}

/// Adds the trend in `info` back onto every series.
pub fn retrend(panel: &PanelData, info: &DetrendInfo) -> PanelData {
    let trend: Vec<f64> = panel.times.iter().map(|&t| info.trend_at(t)).collect();
    panel.map_values(|t, v| v + trend[t])
}

/// Keeps only the true pre-treatment rows and moves the split to
/// `placebo_t0`, so the new post period is untreated.
pub fn placebo_split(panel: &PanelData, placebo_t0: usize) -> Result<PanelData> {
    if placebo_t0 < 1 || placebo_t0 >= panel.t0() {
        return Err(Error::Validation(format!(
            "placebo T0={placebo_t0} must satisfy 1 <= placebo T0 < T0={}",
            panel.t0()
        )));
    }
    let n = panel.t0();
    PanelData::with_times(
        panel.times[..n].to_vec(),
        panel.y[..n].to_vec(),
        panel.w[..n * panel.dw].to_vec(),
        panel.dw,
        panel.z[..n * panel.dz].to_vec(),
        panel.dz,
        placebo_t0,
        panel.labels.clone(),
    )
}
