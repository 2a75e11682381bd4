//! Small dense complex linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SimError};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// One CN(0, 1) draw.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVec {
    CVec::from_fn(n, |_, _| complex_normal(rng))
}

pub fn trace_re(m: &CMat) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)].re).sum()
}

/// Largest |A - Aᴴ| entry.
pub fn hermitian_defect(m: &CMat) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Smallest eigenvalue of the Hermitian part of `m`.
pub fn min_eigenvalue(m: &CMat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(hermitian_part(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn all_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Cholesky that refuses matrices which are not positive definite.
///
/// nalgebra takes complex square roots of the pivots, so an indefinite
/// Hermitian matrix still "factors"; the pivots must be checked by hand.
fn positive_cholesky(a: &CMat) -> Option<nalgebra::Cholesky<Complex64, nalgebra::Dyn>> {
    let ch = a.clone().cholesky()?;
    let l = ch.l_dirty();
    let ok = (0..a.nrows()).all(|i| {
        let d = l[(i, i)];
        d.re > 0.0 && d.re.is_finite() && d.im.abs() <= 1e-12 * d.re
    });
    ok.then_some(ch)
}

/// Solves `A X = B` for Hermitian positive definite `A`. Falls back to LU
/// when Cholesky fails on a matrix that is only numerically semidefinite.
pub fn hermitian_solve(a: &CMat, b: &CMat) -> Result<CMat> {
    if !all_finite(a) || !all_finite(b) {
        return Err(SimError::numerical("non-finite entries in linear system"));
    }
    if let Some(ch) = positive_cholesky(a) {
        return Ok(ch.solve(b));
    }
    a.clone()
        .lu()
        .solve(b)
        .filter(all_finite)
        .ok_or_else(|| SimError::numerical(format!("singular {0}x{0} system", a.nrows())))
}

pub fn hermitian_solve_vec(a: &CMat, b: &CVec) -> Result<CVec> {
    let x = hermitian_solve(a, &CMat::from_column_slice(b.len(), 1, b.as_slice()))?;
    Ok(CVec::from_column_slice(x.as_slice()))
}

pub fn hermitian_inverse(a: &CMat) -> Result<CMat> {
    hermitian_solve(a, &CMat::identity(a.nrows(), a.ncols()))
}

/// Returns `F` with `F Fᴴ = R` for a positive semidefinite `R`.
///
/// Cholesky is tried first. Otherwise the eigendecomposition is used with
/// eigenvalues down to `-1e-9 · trace` clipped to zero; anything more
/// negative is an error.
pub fn psd_factor(r: &CMat) -> Result<CMat> {
    let n = r.nrows();
    if !all_finite(r) {
        return Err(SimError::numerical("non-finite covariance"));
    }
    let tr = trace_re(r);
    if tr == 0.0 && r.iter().all(|z| *z == ZERO) {
        return Ok(CMat::zeros(n, n));
    }
    if let Some(ch) = positive_cholesky(r) {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(hermitian_part(r));
    let floor = -1e-9 * tr.abs();
    let mut f = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < floor {
            return Err(SimError::numerical(format!(
                "covariance has eigenvalue {lambda:e} below tolerance {floor:e}"
            )));
        }
        let s = Complex64::new(lambda.max(0.0).sqrt(), 0.0);
        for i in 0..n {
            f[(i, j)] *= s;
        }
    }
    Ok(f)
}

/// Frobenius norm of `a - b` relative to that of `b`.
pub fn rel_frobenius(a: &CMat, b: &CMat) -> f64 {
    (a - b).norm() / b.norm()
}
