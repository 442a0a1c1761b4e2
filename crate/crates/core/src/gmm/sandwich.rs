use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::moments::ThetaLayout;

/// `(1/T) A^{-1} B A^{-1}` with `A = R' Omega R` and `B = R' Omega S Omega R`.
///
/// `r` is the mean Jacobian (`m × p`), `meat` the long-run covariance of the
/// moments. Solves against `A` by Cholesky; never forms `A^{-1}`.
pub fn sandwich_vcov(r: &DMatrix<f64>, omega: &DMatrix<f64>, meat: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    sandwich_impl(r, omega, meat, n, None)
}

pub(crate) fn sandwich_with_layout(
    r: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    meat: &DMatrix<f64>,
    n: usize,
    layout: &ThetaLayout,
) -> Result<DMatrix<f64>> {
    sandwich_impl(r, omega, meat, n, Some(layout))
}

fn sandwich_impl(
    r: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    meat: &DMatrix<f64>,
    n: usize,
    layout: Option<&ThetaLayout>,
) -> Result<DMatrix<f64>> {
    let (m, p) = r.shape();
    if omega.shape() != (m, m) {
        return Err(Error::dim(m, omega.nrows(), "weight matrix"));
    }
    if meat.shape() != (m, m) {
        return Err(Error::dim(m, meat.nrows(), "HAC meat"));
    }
    if n == 0 {
        return Err(Error::Validation("sandwich needs at least one period".into()));
    }
    let omega_r = omega * r;
    let a = r.transpose() * &omega_r;
    let a = symmetrize(a);

    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let (imin, min) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    if p > 0 && (max == 0.0 || min <= 1e-12 * max) {
        let v = eig.eigenvectors.column(imin);
        let worst = v.iamax();
        let block = match layout {
            Some(l) => l.block_of(worst).to_string(),
            None => format!("theta[{worst}]"),
        };
        return Err(Error::RankDeficient { block });
    }

    let b = omega_r.transpose() * meat * &omega_r;
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numerical("bread matrix is not positive definite".into()))?;
    let left = chol.solve(&b);
    let mut v = symmetrize(chol.solve(&left.transpose()) / n as f64);
    // B is PSD, so negative variances are rounding (e.g. a degenerate
    // centering parameter whose moment has zero spread)
    for i in 0..p {
        if v[(i, i)] < 0.0 {
            v[(i, i)] = 0.0;
        }
    }
    Ok(v)
}

fn symmetrize(mut a: DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_inputs() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        let v = sandwich_vcov(&i3, &i3, &i3, 1).unwrap();
        assert!((v - &i3).abs().max() < 1e-15);
    }

    #[test]
    fn scalar_algebra() {
        let v = sandwich_vcov(
            &DMatrix::from_element(1, 1, 2.0),
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 4.0),
            1,
        )
        .unwrap();
        assert!((v[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn divides_by_period_count() {
        let r = DMatrix::from_element(1, 1, 1.0);
        let v = sandwich_vcov(&r, &r, &DMatrix::from_element(1, 1, 3.0), 30).unwrap();
        assert!((v[(0, 0)] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rank_deficiency_names_the_block() {
        let mut r = DMatrix::<f64>::zeros(3, 2);
        r[(0, 0)] = 1.0;
        r[(1, 0)] = 2.0;
        let i3 = DMatrix::<f64>::identity(3, 3);
        match sandwich_vcov(&r, &i3, &i3, 10) {
            Err(Error::RankDeficient { block }) => assert_eq!(block, "theta[1]"),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn weight_scale_cancels() {
        let r = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, 0.1]);
        let omega = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5]);
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 2.0, -0.3, 0.1, -0.3, 1.5]);
        let v1 = sandwich_vcov(&r, &omega, &s, 7).unwrap();
        let v2 = sandwich_vcov(&r, &(&omega * 13.0), &s, 7).unwrap();
        assert!((v1 - v2).abs().max() < 1e-12);
    }
}
