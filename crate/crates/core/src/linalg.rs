//! Thin wrappers over faer for the dense kernels used throughout the crate.

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Mat<f64> {
    let mut m = Mat::<f64>::zeros(rows, cols);
    for j in 0..cols {
        for v in m.col_as_slice_mut(j) {
            let g: f64 = rng.sample(StandardNormal);
            *v = std * g;
        }
    }
    m
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// column signs of `Q` fixed by the signs of `diag(R)`.
pub fn haar_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Mat<f64> {
    let g = gaussian_matrix(n, n, 1.0, rng);
    let qr = g.qr();
    let mut q = qr.compute_Q();
    let r = qr.R();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for v in q.col_as_slice_mut(j) {
                *v = -*v;
            }
        }
    }
    q
}

/// `A = left · diag(values) · rightᵀ` with `left` of size m×k and `right` of
/// size n×k, k = min(m, n), singular values in nonincreasing order.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub left: Mat<f64>,
    pub values: Vec<f64>,
    pub right: Mat<f64>,
}

pub fn thin_svd(a: &Mat<f64>) -> Result<ThinSvd> {
    let svd = a
        .thin_svd()
        .map_err(|e| Error::LinAlg(format!("SVD failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let values: Vec<f64> = (0..s.nrows()).map(|i| s[i]).collect();
    Ok(ThinSvd {
        left: svd.U().to_owned(),
        values,
        right: svd.V().to_owned(),
    })
}

pub fn singular_values(a: &Mat<f64>) -> Result<Vec<f64>> {
    a.singular_values()
        .map_err(|e| Error::LinAlg(format!("SVD failed: {e:?}")))
}

/// `A x`.
pub fn mat_vec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.ncols(), x.len());
    let mut y = vec![0.0; a.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        for (yi, &aij) in y.iter_mut().zip(a.col_as_slice(j)) {
            *yi += aij * xj;
        }
    }
    y
}

/// `Aᵀ x`.
pub fn mat_t_vec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.nrows(), x.len());
    (0..a.ncols()).map(|j| dot(a.col_as_slice(j), x)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// Solve `A x = b` for symmetric positive definite `A`.
pub fn solve_spd(a: &Mat<f64>, b: &[f64]) -> Result<Vec<f64>> {
    use faer::linalg::solvers::Solve;
    let llt = a
        .llt(faer::Side::Lower)
        .map_err(|e| Error::LinAlg(format!("Cholesky failed: {e:?}")))?;
    let rhs = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
    let x = llt.solve(&rhs);
    Ok((0..b.len()).map(|i| x[(i, 0)]).collect())
}

/// `Aᵀ A` for a tall or wide matrix.
pub fn gram(a: &Mat<f64>) -> Mat<f64> {
    a.transpose() * a
}

/// `A Aᵀ`.
pub fn outer_gram(a: &Mat<f64>) -> Mat<f64> {
    a * a.transpose()
}
