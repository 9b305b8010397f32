//! Small dense least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff for the pseudo-inverse fallback.
pub const PINV_RCOND: f64 = 1e-12;

/// Least-squares coefficients for each column of `rhs` regressed on `design`.
#[derive(Debug, Clone)]
pub struct LstsqFit {
    /// `p x r` coefficient matrix, one column per right-hand side.
    pub coef: DMatrix<f64>,
    pub used_pseudo_inverse: bool,
}

/// Solves `min ||design * b - rhs||` column by column.
///
/// Uses a Cholesky factorization of the normal equations; when the Gram matrix
/// is not numerically positive definite it falls back to an SVD pseudo-inverse
/// with relative cutoff [`PINV_RCOND`].
pub fn lstsq(design: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<LstsqFit> {
    let gram = design.tr_mul(design);
    let xty = design.tr_mul(rhs);
    let p = gram.nrows();
    let max_diag = (0..p).map(|i| gram[(i, i)]).fold(0.0_f64, f64::max);
    if max_diag > 0.0 {
        if let Some(chol) = gram.clone().cholesky() {
            let l = chol.l_dirty();
            let min_pivot = (0..p).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
            if min_pivot > PINV_RCOND * max_diag {
                return Ok(LstsqFit { coef: chol.solve(&xty), used_pseudo_inverse: false });
            }
        }
    }
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if !smax.is_finite() {
        return Err(Error::SingularDesign("non-finite singular values".into()));
    }
    let coef = svd
        .solve(rhs, PINV_RCOND * smax.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::SingularDesign(e.to_string()))?;
    Ok(LstsqFit { coef, used_pseudo_inverse: true })
}

/// Solves the square system `a x = b`, erroring when `a` is singular.
pub fn solve_square(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    lu.solve(b).ok_or_else(|| Error::SingularDesign("square system is singular".into()))
}

pub fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.clone().try_inverse().ok_or_else(|| Error::SingularDesign("matrix is not invertible".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit_recovers_coefficients() {
        let x = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0]);
        let y = DMatrix::from_column_slice(5, 1, &[1.0, 3.0, 5.0, 7.0, 9.0]);
        let fit = lstsq(&x, &y).unwrap();
        assert!(!fit.used_pseudo_inverse);
        assert!((fit.coef[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((fit.coef[(1, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_design_uses_pseudo_inverse() {
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 1.0, 2.0, 1.0, 2.0, 4.0, 1.0, 3.0, 6.0, 1.0, 4.0, 8.0]);
        let y = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 2.0, 5.0]);
        let fit = lstsq(&x, &y).unwrap();
        assert!(fit.used_pseudo_inverse);
        let resid = &y - &x * &fit.coef;
        let orth = x.tr_mul(&resid);
        assert!(orth.iter().all(|v| v.abs() < 1e-10));
    }
}
