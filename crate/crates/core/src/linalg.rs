//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Returns `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Largest absolute asymmetry `|a_ij - a_ji|`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Cholesky factorization, retrying with growing diagonal jitter.
pub fn cholesky_jittered(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c);
    }
    let scale = (0..a.nrows())
        .map(|i| a[(i, i)].abs())
        .fold(0.0f64, f64::max)
        .max(1.0);
    let mut jitter = 1e-12 * scale;
    for _ in 0..8 {
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(b) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::numerical("matrix is not positive definite"))
}

/// Inverse of a symmetric positive-definite matrix, symmetrized.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let c = Cholesky::new(a.clone())
        .ok_or_else(|| Error::numerical("matrix is not positive definite"))?;
    Ok(symmetrize(&c.inverse()))
}

pub fn is_positive_definite(a: &DMatrix<f64>) -> bool {
    a.is_square() && Cholesky::new(a.clone()).is_some()
}

/// Row-wise quadratic forms `x_iᵀ A x_i` for every row of `x`.
pub fn row_quadratic_forms(x: &DMatrix<f64>, a: &DMatrix<f64>) -> Vec<f64> {
    let xa = x * a;
    (0..x.nrows()).map(|i| xa.row(i).dot(&x.row(i))).collect()
}

/// Draws `mean + L z` with `L` the lower Cholesky factor of `cov`.
pub fn mvn_from_standard(
    mean: &DVector<f64>,
    cov_chol: &Cholesky<f64, Dyn>,
    z: &DVector<f64>,
) -> DVector<f64> {
    mean + cov_chol.l() * z
}
