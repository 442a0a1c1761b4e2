//! Newey-West long-run covariance of a moment series.
//!
//! `S = Gamma_0 + sum_{j=1}^{L} k(j / (L + 1)) (Gamma_j + Gamma_j^T)` with the
//! Bartlett kernel `k(x) = 1 - x` and `Gamma_j = (1/T) sum_{t>j} G_t G_{t-j}^T`.
//! Autocovariances are uncentered unless [`HacOptions::centered`] is set.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Bartlett,
}

impl Kernel {
    pub fn weight(self, x: f64) -> f64 {
        match self {
            Kernel::Bartlett => (1.0 - x).max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// `floor(4 (T / 100)^(2/9))`.
    #[default]
    NeweyWestAuto,
    Fixed(usize),
}

impl Bandwidth {
    pub fn lag(self, n: usize) -> usize {
        match self {
            Bandwidth::NeweyWestAuto => newey_west_lag(n),
            Bandwidth::Fixed(l) => l,
        }
    }
}

impl std::str::FromStr for Bandwidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Bandwidth::NeweyWestAuto);
        }
        s.parse()
            .map(Bandwidth::Fixed)
            .map_err(|_| Error::Validation(format!("bad HAC lag `{s}` (expected auto or a nonnegative integer)")))
    }
}

pub fn newey_west_lag(n: usize) -> usize {
    (4.0 * (n as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct HacOptions {
    pub kernel: Kernel,
    pub bandwidth: Bandwidth,
    /// Not supported; must stay false.
    pub prewhiten: bool,
    /// Subtract column means before forming autocovariances.
    pub centered: bool,
}

#[derive(Debug, Clone)]
pub struct HacEstimate {
    pub matrix: DMatrix<f64>,
    pub lag: usize,
    /// Negative eigenvalues beyond 1e-8 relative were clipped to zero.
    pub clipped: bool,
    /// More moments than periods; the estimate is rank deficient.
    pub rank_warning: bool,
}

/// Long-run covariance of the rows of `series` (`T × m`).
pub fn hac_meat(series: &DMatrix<f64>, options: &HacOptions) -> Result<HacEstimate> {
    if options.prewhiten {
        return Err(Error::Unsupported("prewhitened HAC estimation".into()));
    }
    let (n, m) = series.shape();
    let lag = options.bandwidth.lag(n);
    if n <= lag {
        return Err(Error::Validation(format!("HAC lag {lag} requires more than {lag} periods, have {n}")));
    }
    let centered;
    let x = if options.centered {
        let mut c = series.clone();
        for mut col in c.column_iter_mut() {
            let mean = col.sum() / n as f64;
            col.add_scalar_mut(-mean);
        }
        centered = c;
        &centered
    } else {
        series
    };

    let mut s = autocovariance(x, 0);
    for j in 1..=lag {
        let k = options.kernel.weight(j as f64 / (lag + 1) as f64);
        let g = autocovariance(x, j);
        for a in 0..m {
            for b in 0..m {
                s[(a, b)] += k * (g[(a, b)] + g[(b, a)]);
            }
        }
    }

    let mut clipped = false;
    if m > 0 {
        let eig = SymmetricEigen::new(s.clone());
        let max_abs = eig.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        // rounding-level negatives from a Gram matrix are left alone
        if min < -1e-12 * max_abs {
            clipped = -min > 1e-8 * max_abs;
            let vals = eig.eigenvalues.map(|v| v.max(0.0));
            s = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
            for a in 0..m {
                for b in a + 1..m {
                    let avg = 0.5 * (s[(a, b)] + s[(b, a)]);
                    s[(a, b)] = avg;
                    s[(b, a)] = avg;
                }
            }
        }
    }
    Ok(HacEstimate {
        matrix: s,
        lag,
        clipped,
        rank_warning: m > n,
    })
}

/// `(1/T) sum_{t=j}^{T-1} x_t x_{t-j}^T`, summed in time order.
fn autocovariance(x: &DMatrix<f64>, j: usize) -> DMatrix<f64> {
    let (n, m) = x.shape();
    let mut g = DMatrix::zeros(m, m);
    for a in 0..m {
        let ca = x.column(a);
        let b_range = if j == 0 { a..m } else { 0..m };
        for b in b_range {
            let cb = x.column(b);
            let mut acc = 0.0;
            for t in j..n {
                acc += ca[t] * cb[t - j];
            }
            g[(a, b)] = acc / n as f64;
            if j == 0 {
                g[(b, a)] = g[(a, b)];
            }
        }
    }
    g
}
