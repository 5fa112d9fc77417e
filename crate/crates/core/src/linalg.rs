//! Small dense helpers on top of nalgebra. Matrices here are d×d or noise
//! blocks, so eigendecompositions are cheap.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PD_RELATIVE_FLOOR: f64 = 1e-14;

fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Applies `f` to the eigenvalues of a symmetric positive-definite matrix.
fn spectral_map(m: &DMatrix<f64>, what: &str, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Config(alloc::format!("{what} is not square")));
    }
    let eig = symmetric_part(m).symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if eig
        .eigenvalues
        .iter()
        .any(|&v| !(v > PD_RELATIVE_FLOOR * scale) || !v.is_finite())
    {
        return Err(Error::Config(alloc::format!(
            "{what} is not positive definite"
        )));
    }
    let mapped =
        DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&v| f(v)));
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&mapped) * q.transpose())
}

/// Symmetric inverse square root `M^{-1/2}`.
pub fn inv_sqrt_spd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    spectral_map(m, what, |v| 1.0 / libm::sqrt(v))
}

/// Symmetric square root `M^{1/2}`.
pub fn sqrt_spd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    spectral_map(m, what, libm::sqrt)
}

/// Inverse of a symmetric positive-definite matrix.
pub fn inverse_spd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    spectral_map(m, what, |v| 1.0 / v)
}

/// Eigenvalues of the symmetric part of `m`, sorted descending.
pub fn sym_eigenvalues_desc(m: &DMatrix<f64>) -> alloc::vec::Vec<f64> {
    let eig = symmetric_part(m).symmetric_eigen();
    let mut v: alloc::vec::Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    v
}

/// Solves `A x = b` for symmetric positive-definite `A` by Cholesky.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = symmetric_part(a)
        .cholesky()
        .ok_or_else(|| Error::Numerical("normal matrix is singular or indefinite".into()))?;
    Ok(chol.solve(b))
}
