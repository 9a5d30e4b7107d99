//! Symmetric eigendecomposition by cyclic Jacobi rotations and the PSD square
//! root built on it. Intended for the small (≤ 32) covariance matrices of the
//! Fréchet metric.

use super::Matrix;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const JACOBI_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;
const NEG_EIGEN_CLAMP: f64 = 1e-10;

/// Eigenvalues and column eigenvectors of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a.get(i, j).powi(2);
            }
        }
    }
    s.sqrt()
}

pub fn sym_eigen(a: &Matrix) -> Result<SymEigen> {
    let asym = a.asymmetry();
    if asym > SYMMETRY_TOL {
        if asym.is_infinite() {
            return Err(Error::Shape(format!(
                "eigendecomposition needs a square matrix, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        return Err(Error::NotSymmetric(asym));
    }
    let n = a.rows();
    let mut m = a.symmetrized();
    let mut v = Matrix::identity(n);
    let scale = m.frobenius_norm().max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&m) <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let values = (0..n).map(|i| m.get(i, i)).collect();
    Ok(SymEigen { values, vectors: v })
}

/// Symmetric PSD square root `S` with `S·S = a`.
///
/// Eigenvalues in `[-1e-10, 0)` are clamped to zero; anything more negative is
/// rejected as not positive semi-definite.
pub fn psd_sqrt(a: &Matrix) -> Result<Matrix> {
    let eig = sym_eigen(a)?;
    let scale = eig.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut roots = Vec::with_capacity(eig.values.len());
    for &lambda in &eig.values {
        if lambda < -NEG_EIGEN_CLAMP * scale {
            return Err(Error::Numeric(format!(
                "matrix is not positive semi-definite (eigenvalue {lambda:e})"
            )));
        }
        roots.push(lambda.max(0.0).sqrt());
    }
    let v = &eig.vectors;
    let scaled = Matrix::from_fn(v.rows(), v.cols(), |r, c| v.get(r, c) * roots[c]);
    Ok(scaled.matmul_t(v).symmetrized())
}
