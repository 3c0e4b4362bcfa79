//! Inversion helpers for the small symmetric matrices that appear in sandwich formulas.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{EpdError, Result};

/// Condition number above which a matrix is reported as degenerate.
pub const MAX_CONDITION: f64 = 1e12;

/// 2-norm condition number of a symmetric matrix (ratio of extreme |eigenvalues|).
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::new(sym);
    let abs: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    let max = abs.iter().copied().fold(0.0, f64::max);
    let min = abs.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a symmetric matrix with condition-number reporting.
///
/// Cholesky when positive definite, LU otherwise (the empirical `J` of a
/// contaminated sample need not be definite away from the fitted root).
pub fn inverse_symmetric(m: &DMatrix<f64>, context: &str) -> Result<(DMatrix<f64>, f64)> {
    let sym = 0.5 * (m + m.transpose());
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(EpdError::Singular {
            context: format!("{context}: non-finite entries"),
            condition: f64::INFINITY,
        });
    }
    let condition = condition_number(&sym);
    if !(condition <= MAX_CONDITION) {
        return Err(EpdError::Singular {
            context: context.to_string(),
            condition,
        });
    }
    let inv = match sym.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => sym.try_inverse().ok_or_else(|| EpdError::Singular {
            context: context.to_string(),
            condition,
        })?,
    };
    Ok((0.5 * (&inv + inv.transpose()), condition))
}

/// `A^{-1} B A^{-1}`, symmetrized.
pub fn sandwich(a_inv: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let v = a_inv * b * a_inv;
    0.5 * (&v + v.transpose())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = 0.5 * (m + m.transpose());
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Solve `m x = rhs` for a small square system.
pub fn solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    m.clone().lu().solve(rhs)
}
