//! Dense complex linear algebra on top of `nalgebra`.
//!
//! Cholesky factorisation, solves and inverses come from `nalgebra`. The
//! Hermitian eigensolver is a cyclic Jacobi method: γ-scaled matrices of the
//! form `D B D` are strongly graded (entries spanning twelve orders of
//! magnitude at the SIC limits) and Jacobi keeps small eigenvalues accurate
//! relative to their own size, which tridiagonal QR does not.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

const JACOBI_MAX_SWEEPS: usize = 80;

/// `(m + mᴴ) / 2`, with an exactly real diagonal.
pub fn hermitize(m: &CMat) -> CMat {
    let mut h = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    for i in 0..h.nrows() {
        h[(i, i)] = Complex64::new(h[(i, i)].re, 0.0);
    }
    h
}

pub fn is_hermitian(m: &CMat, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let n = m.nrows();
    for i in 0..n {
        if m[(i, i)].im.abs() > tol {
            return false;
        }
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)].conj()).norm() > tol {
                return false;
            }
        }
    }
    true
}

fn cholesky(m: &CMat) -> Result<nalgebra::Cholesky<Complex64, nalgebra::Dyn>> {
    let not_hpd = || Error::Numerical("matrix is not Hermitian positive definite".into());
    let chol = m.clone().cholesky().ok_or_else(not_hpd)?;
    // the complex square root accepts negative pivots, so check them here
    let l = chol.l_dirty();
    if (0..m.nrows()).any(|j| !(l[(j, j)].re > 0.0 && l[(j, j)].re.is_finite()) || l[(j, j)].im != 0.0) {
        return Err(not_hpd());
    }
    Ok(chol)
}

/// `ln det m` for Hermitian positive definite `m`.
pub fn log_det_hpd(m: &CMat) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let chol = cholesky(m)?;
    let l = chol.l_dirty();
    Ok((0..m.nrows()).map(|j| 2.0 * l[(j, j)].re.ln()).sum())
}

pub fn solve_hpd(m: &CMat, rhs: &CVec) -> Result<CVec> {
    Ok(cholesky(m)?.solve(rhs))
}

pub fn inverse_hpd(m: &CMat) -> Result<CMat> {
    Ok(hermitize(&cholesky(m)?.inverse()))
}

/// General square solve by LU, for the non-Hermitian right-hand sides that
/// show up in the rewritten estimator.
pub fn solve_general(m: &CMat, rhs: &CVec) -> Result<CVec> {
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Numerical("singular matrix in LU solve".into()))
}

/// Eigenpairs of a Hermitian matrix: `m = V diag(values) Vᴴ`, values ascending.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl HermitianEigen {
    /// `|V_ij|²`: how much of coordinate `i` lives in eigenmode `j`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.vectors[(i, j)].norm_sqr()
    }
}

pub fn hermitian_eigen(m: &CMat) -> Result<HermitianEigen> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "eigendecomposition of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if !scale.is_finite() {
        return Err(Error::Numerical("non-finite entry in eigendecomposition input".into()));
    }
    if !is_hermitian(m, 1e-10 * scale.max(1.0)) {
        return Err(Error::Numerical("eigendecomposition input is not Hermitian".into()));
    }
    let n = m.nrows();
    let mut a = hermitize(m);
    let mut v = CMat::identity(n, n);

    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let beta = apq.norm();
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                // Relative threshold: keeps graded spectra accurate.
                if beta <= f64::EPSILON * 0.5 * (app.abs() * aqq.abs()).sqrt() || beta == 0.0 {
                    continue;
                }
                rotated = true;
                let phase = apq / beta;
                let tau = (aqq - app) / (2.0 * beta);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // U acts on (p, q): col p = (c, -s·conj(phase)), col q = (s, c·conj(phase)).
                let u_pp = Complex64::new(c, 0.0);
                let u_qp = -phase.conj() * s;
                let u_pq = Complex64::new(s, 0.0);
                let u_qq = phase.conj() * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * u_pp + akq * u_qp;
                    a[(k, q)] = akp * u_pq + akq * u_qq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = u_pp.conj() * apk + u_qp.conj() * aqk;
                    a[(q, k)] = u_pq.conj() * apk + u_qq.conj() * aqk;
                }
                a[(p, q)] = Complex64::new(0.0, 0.0);
                a[(q, p)] = Complex64::new(0.0, 0.0);
                a[(p, p)] = Complex64::new(app - t * beta, 0.0);
                a[(q, q)] = Complex64::new(aqq + t * beta, 0.0);
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * u_pp + vkq * u_qp;
                    v[(k, q)] = vkp * u_pq + vkq * u_qq;
                }
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "Jacobi eigensolver did not converge in {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = CMat::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(HermitianEigen { values, vectors })
}

/// Principal submatrix on the given (sorted, distinct) indices.
pub fn principal_submatrix(m: &CMat, idx: &[usize]) -> CMat {
    CMat::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}
