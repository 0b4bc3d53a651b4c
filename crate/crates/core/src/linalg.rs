//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
const SYMMETRY_TOL: f64 = 1e-9;

pub fn is_symmetric(m: &DMatrix<f64>) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return false;
            }
        }
    }
    true
}

/// Smallest and largest eigenvalues of a symmetric matrix.
pub fn eigen_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Checks symmetry and strict positive definiteness (min eigenvalue above
/// `1e-12` relative to the largest).
pub fn require_spd(what: &str, m: &DMatrix<f64>) -> Result<(f64, f64)> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Model(format!("{what} has non-finite entries")));
    }
    if !is_symmetric(m) {
        return Err(Error::Model(format!("{what} is not symmetric")));
    }
    let (lo, hi) = eigen_extremes(m);
    if !(lo > 1e-12 * hi.abs().max(1e-300)) || hi <= 0.0 {
        return Err(Error::Model(format!(
            "{what} is not positive definite (eigenvalues in [{lo:e}, {hi:e}])"
        )));
    }
    Ok((lo, hi))
}

/// Gram matrix `V^T V` of the given column vectors.
pub fn gram(vectors: &[DVector<f64>]) -> DMatrix<f64> {
    let k = vectors.len();
    DMatrix::from_fn(k, k, |i, j| vectors[i].dot(&vectors[j]))
}

/// Numerical rank from singular values, relative threshold `1e-10`.
pub fn rank(vectors: &[DVector<f64>]) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    let m = DMatrix::from_columns(vectors);
    let sv = m.singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > 1e-10 * top).count()
}

/// Quadratic form `u^T M u`.
pub fn quad_form(m: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
    u.dot(&(m * u))
}

/// Solves `M x = b` for symmetric positive definite `M`.
pub fn spd_solve(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.solve(b))
        .ok_or_else(|| Error::Model("matrix is singular or not positive definite".into()))
}
