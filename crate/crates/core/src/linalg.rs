//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;

use crate::error::{Result, ZiplnError};

pub(crate) fn cholesky_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| ZiplnError::InvalidParameter(format!("{what} is not positive definite")))?;
    Ok(symmetrize(&chol.inverse()))
}

/// log det of a symmetric positive-definite matrix.
pub(crate) fn log_det_spd(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| ZiplnError::InvalidParameter(format!("{what} is not positive definite")))?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Numerical rank from the singular values, with the usual `max(n, d) * eps * s_max` cutoff.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let tol = (m.nrows().max(m.ncols()) as f64) * f64::EPSILON * smax;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Least-squares coefficients `(X^T X)^{-1} X^T Y`.
pub(crate) fn least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let xtx = x.tr_mul(x);
    let chol = xtx
        .cholesky()
        .ok_or_else(|| ZiplnError::Identifiability(what.to_string()))?;
    Ok(chol.solve(&x.tr_mul(y)))
}
