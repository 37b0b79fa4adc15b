//! Dense complex linear algebra helpers on top of `nalgebra`.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

pub type C64 = Complex64;
pub type Mat = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn eye(n: usize) -> Mat {
    Mat::identity(n, n)
}

pub fn zeros(r: usize, c: usize) -> Mat {
    Mat::zeros(r, c)
}

pub fn scalar(z: C64) -> Mat {
    Mat::from_element(1, 1, z)
}

/// Frobenius norm.
pub fn fnorm(m: &Mat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest entry modulus.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0, |a, z| a.max(z.norm()))
}

pub fn herm_part(m: &Mat) -> Mat {
    (m + m.adjoint()).scale(0.5)
}

pub fn is_hermitian(m: &Mat, tol: f64) -> bool {
    m.is_square() && max_abs(&(m - m.adjoint())) <= tol * (1.0 + max_abs(m))
}

pub fn inverse(m: &Mat) -> Result<Mat> {
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("{}x{} matrix", m.nrows(), m.ncols())))
}

/// Eigen-decomposition of a Hermitian matrix (ascending eigenvalues).
pub fn eigh(m: &Mat) -> (Vec<f64>, Mat) {
    let n = m.nrows();
    if n == 0 {
        return (vec![], zeros(0, 0));
    }
    let se = nalgebra::SymmetricEigen::new(herm_part(m));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| se.eigenvalues[a].partial_cmp(&se.eigenvalues[b]).unwrap());
    let vals = idx.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vecs = zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &se.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Applies a real function to the spectrum of a Hermitian matrix.
pub fn herm_fn(m: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    let (vals, vecs) = eigh(m);
    let n = vals.len();
    let mut d = zeros(n, n);
    for i in 0..n {
        d[(i, i)] = c(f(vals[i]), 0.0);
    }
    &vecs * d * vecs.adjoint()
}

/// Lower Cholesky factor of a Hermitian positive definite matrix.
pub fn cholesky(h: &Mat) -> Option<Mat> {
    if h.nrows() == 0 {
        return Some(h.clone());
    }
    // Complex Cholesky in nalgebra happily takes square roots of negative
    // pivots, so reject any pivot that is not real positive.
    let l = nalgebra::Cholesky::new(herm_part(h))?.l();
    let ok = l.diagonal().iter().all(|d| d.re > 0.0 && d.im.abs() <= 1e-12 * d.re && d.re.is_finite());
    ok.then_some(l)
}

pub fn is_positive_definite(h: &Mat) -> bool {
    h.is_square() && is_hermitian(h, 1e-10) && cholesky(h).is_some()
}

/// Eigenvalues of `b^{-1} a` for Hermitian `a` and positive definite `b`.
pub fn gen_eigvals(a: &Mat, b: &Mat) -> Result<Vec<f64>> {
    let l = cholesky(b).ok_or_else(|| Error::Singular("metric not positive definite".into()))?;
    let li = inverse(&l)?;
    Ok(eigh(&(&li * a * li.adjoint())).0)
}

/// Operator norm of `m` with respect to the inner product `v^† h v`.
pub fn op_norm_h(m: &Mat, h: &Mat) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let l = cholesky(h).ok_or_else(|| Error::Singular("metric not positive definite".into()))?;
    let t = l.adjoint() * m * inverse(&l.adjoint())?;
    Ok(t.singular_values().max())
}

/// Orthonormal basis (columns) of the kernel of `a`, using singular values
/// at most `rel_tol * σ_max` (or `abs_floor` when `a` vanishes).
pub fn null_space(a: &Mat, rel_tol: f64) -> Mat {
    let (m, n) = a.shape();
    if n == 0 {
        return zeros(0, 0);
    }
    if m == 0 {
        return eye(n);
    }
    // Pad to at least n rows so the SVD returns a full right basis.
    let rows = m.max(n);
    let mut p = zeros(rows, n);
    p.view_mut((0, 0), (m, n)).copy_from(a);
    let svd = p.svd(false, true);
    let vt = svd.v_t.unwrap();
    let smax = svd.singular_values.max();
    let thresh = if smax > 0.0 { rel_tol * smax } else { 0.0 };
    let cols: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] <= thresh).collect();
    let mut out = zeros(n, cols.len());
    for (k, &i) in cols.iter().enumerate() {
        let row = vt.row(i).adjoint();
        out.set_column(k, &row);
    }
    out
}

/// Numerical rank with relative threshold.
pub fn rank(a: &Mat, rel_tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

pub fn random_matrix<R: Rng>(rng: &mut R, r: usize, cols: usize) -> Mat {
    Mat::from_fn(r, cols, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

/// Random Hermitian positive definite matrix with spectrum in `[0.5, 2.5)`.
pub fn random_hpd<R: Rng>(rng: &mut R, n: usize) -> Mat {
    let a = random_matrix(rng, n, n);
    let q = a.qr().q();
    let d = Mat::from_fn(n, n, |i, j| if i == j { c(rng.gen_range(0.5..2.5), 0.0) } else { ZERO });
    herm_part(&(&q * d * q.adjoint()))
}

/// `tr(a b)` without forming the product.
pub fn trace_prod(a: &Mat, b: &Mat) -> C64 {
    let mut s = ZERO;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            s += a[(i, k)] * b[(k, i)];
        }
    }
    s
}

pub fn trace(a: &Mat) -> C64 {
    a.diagonal().iter().copied().sum()
}

/// Orthonormal basis of the column space of `a`.
pub fn orth(a: &Mat, rel_tol: f64) -> Mat {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return zeros(m, 0);
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.unwrap();
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return zeros(m, 0);
    }
    let cols: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > rel_tol * smax)
        .collect();
    let mut out = zeros(m, cols.len());
    for (k, &i) in cols.iter().enumerate() {
        out.set_column(k, &u.column(i));
    }
    out
}
