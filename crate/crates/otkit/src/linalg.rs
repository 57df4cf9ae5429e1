//! Small dense helpers: symmetric eigendecomposition, matrix functions, log-sum-exp.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};

pub(crate) fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    let (n, m) = a.dim();
    DMatrix::from_fn(n, m, |i, j| a[[i, j]])
}

pub(crate) fn from_na(a: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(i, j)| a[(i, j)])
}

/// Eigenvalues and eigenvectors (as columns) of the symmetric part of `a`.
pub(crate) fn sym_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let sym = (to_na(a) + to_na(a).transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    (
        Array1::from_iter(eig.eigenvalues.iter().copied()),
        from_na(&eig.eigenvectors),
    )
}

/// `V diag(h(lambda)) V^T` for symmetric `a`.
pub(crate) fn sym_apply(a: &Array2<f64>, h: impl Fn(f64) -> f64) -> Array2<f64> {
    let (vals, vecs) = sym_eigen(a);
    let scaled = &vecs * &vals.mapv(h);
    scaled.dot(&vecs.t())
}

/// Principal square root; negative eigenvalues from round-off are clamped to 0.
pub(crate) fn sqrtm_psd(a: &Array2<f64>) -> Array2<f64> {
    sym_apply(a, |x| x.max(0.0).sqrt())
}

pub(crate) fn min_eigenvalue(a: &Array2<f64>) -> f64 {
    sym_eigen(a).0.iter().copied().fold(f64::INFINITY, f64::min)
}

pub(crate) fn max_eigenvalue(a: &Array2<f64>) -> f64 {
    sym_eigen(a).0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `log sum_k exp(z_k)` with the running maximum subtracted first.
pub(crate) fn logsumexp(z: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = z.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    m + z.map(|x| (x - m).exp()).sum::<f64>().ln()
}
