//! Small dense linear-algebra helpers shared by the estimators, the decoder
//! and the planner.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Solve `X · G = B` for `X` with `G` symmetric positive definite.
///
/// Uses a Cholesky factorisation followed by one step of iterative
/// refinement. Fails with [`Error::Singular`] when `G` is not numerically
/// positive definite.
pub fn solve_spd_right(rhs: &DMatrix<f64>, gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if gram.nrows() != gram.ncols() || rhs.ncols() != gram.nrows() {
        return Err(Error::DimensionMismatch {
            context: "solve_spd_right",
            expected: gram.nrows(),
            got: rhs.ncols(),
        });
    }
    if !gram.iter().all(|v| v.is_finite()) || !rhs.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("normal equations".into()));
    }
    if gram.nrows() == 0 {
        return Ok(DMatrix::zeros(rhs.nrows(), 0));
    }
    let chol = Cholesky::new(gram.clone())
        .ok_or_else(|| Error::Singular("gram matrix is not positive definite".into()))?;
    // X G = B  <=>  G X^T = B^T
    let mut xt = chol.solve(&rhs.transpose());
    let residual = rhs.transpose() - gram * &xt;
    xt += chol.solve(&residual);
    if !xt.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular("solution is not finite".into()));
    }
    Ok(xt.transpose())
}

/// Solve `G x = b` for SPD `G`.
pub fn solve_spd(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = Cholesky::new(gram.clone())
        .ok_or_else(|| Error::Singular("gram matrix is not positive definite".into()))?;
    let mut x = chol.solve(rhs);
    let residual = rhs - gram * &x;
    x += chol.solve(&residual);
    Ok(x)
}

/// Ridge solution `cross · (gram + λI)⁻¹`.
pub fn ridge(cross: &DMatrix<f64>, gram: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let mut reg = gram.clone();
    for k in 0..reg.nrows() {
        reg[(k, k)] += lambda;
    }
    solve_spd_right(cross, &reg)
}

/// `‖C(G + λI) − B‖_F / (‖B‖_F + ε)` for a ridge solution `C`.
pub fn ridge_residual(
    solution: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    let lhs = solution * gram + solution * lambda;
    (lhs - cross).norm() / (cross.norm() + f64::EPSILON)
}

pub fn mean_diagonal(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows().min(m.ncols());
    if n == 0 {
        return 0.0;
    }
    (0..n).map(|k| m[(k, k)]).sum::<f64>() / n as f64
}

/// Smallest eigenvalue of a symmetric matrix. Rejects asymmetric input.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidArgument("matrix is not square".into()));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidArgument("matrix is not symmetric".into()));
    }
    let eig = SymmetricEigen::new(m.clone());
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// 2-norm condition number of a symmetric positive semi-definite matrix.
pub fn spd_condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Largest eigenvalue modulus of a general square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Largest real part among the eigenvalues of a general square matrix.
pub fn max_real_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Population standard deviation of each coordinate over a set of vectors.
pub fn coordinate_std<'a, I>(vectors: I, dim: usize) -> DVector<f64>
where
    I: IntoIterator<Item = &'a DVector<f64>>,
{
    let mut count = 0usize;
    let mut mean = DVector::zeros(dim);
    let mut m2 = DVector::zeros(dim);
    for v in vectors {
        count += 1;
        let delta = v - &mean;
        mean += &delta / count as f64;
        let delta2 = v - &mean;
        m2 += delta.component_mul(&delta2);
    }
    if count == 0 {
        return DVector::zeros(dim);
    }
    (m2 / count as f64).map(f64::sqrt)
}
