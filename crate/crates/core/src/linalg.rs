//! Dense helpers bridging `ndarray` storage and `nalgebra` factorizations.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

pub(crate) fn to_na(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

pub fn frobenius(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest absolute entry of `a - aᵀ`.
pub fn asymmetry(a: ArrayView2<'_, f64>) -> f64 {
    if a.nrows() != a.ncols() {
        return f64::INFINITY;
    }
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    worst
}

pub fn symmetrize(a: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = a.to_owned();
    out += &a.t();
    out *= 0.5;
    out
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Array1<f64>,
    /// Eigenvectors in columns, ordered like `values`.
    pub vectors: Array2<f64>,
}

impl SymEigen {
    /// Cyclic Jacobi rotations until the off-diagonal mass is negligible.
    pub fn new(a: ArrayView2<'_, f64>) -> Self {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "eigen-decomposition needs a square matrix");
        let mut m = symmetrize(a);
        let mut v = Array2::<f64>::eye(n);
        let scale = frobenius(m.view()).max(f64::MIN_POSITIVE);
        for _sweep in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += m[[p, q]] * m[[p, q]];
                }
            }
            if off.sqrt() <= 1e-15 * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m[[p, q]];
                    if apq.abs() <= f64::MIN_POSITIVE {
                        continue;
                    }
                    let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (mkp, mkq) = (m[[k, p]], m[[k, q]]);
                        m[[k, p]] = c * mkp - s * mkq;
                        m[[k, q]] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let (mpk, mqk) = (m[[p, k]], m[[q, k]]);
                        m[[p, k]] = c * mpk - s * mqk;
                        m[[q, k]] = s * mpk + c * mqk;
                    }
                    for k in 0..n {
                        let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                        v[[k, p]] = c * vkp - s * vkq;
                        v[[k, q]] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| m[[i, i]].total_cmp(&m[[j, j]]));
        let values = Array1::from_iter(order.iter().map(|&k| m[[k, k]]));
        let vectors = Array2::from_shape_fn((n, n), |(i, j)| v[[i, order[j]]]);
        SymEigen { values, vectors }
    }

    /// `V · diag(f(λ)) · Vᵀ`.
    pub fn reassemble(&self, f: impl Fn(f64) -> f64) -> Array2<f64> {
        let mut scaled = self.vectors.clone();
        for (mut col, &l) in scaled.columns_mut().into_iter().zip(self.values.iter()) {
            col *= f(l);
        }
        symmetrize(scaled.dot(&self.vectors.t()).view())
    }
}

pub fn spectral_radius_sym(a: ArrayView2<'_, f64>) -> f64 {
    SymEigen::new(a)
        .values
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Inverse of a square matrix, via Cholesky when it is symmetric positive
/// definite and LU otherwise.
pub fn inverse(a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Shape(format!(
            "cannot invert {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let m = to_na(a);
    // Cholesky only reads the lower triangle, so it must not see asymmetric input.
    if asymmetry(a) == 0.0 {
        if let Some(chol) = m.clone().cholesky() {
            return Ok(from_na(&chol.inverse()));
        }
    }
    m.try_inverse()
        .map(|inv| from_na(&inv))
        .ok_or_else(|| Error::Numerical("matrix is singular".into()))
}
