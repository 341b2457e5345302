//! Dense linear-algebra helpers shared by the rest of the crate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative threshold below which eigenvalues (or squared singular values) count as zero.
pub const RANK_TOL: f64 = 1e-10;
/// Relative threshold for clamping slightly negative eigenvalues of PSD estimates.
pub const PSD_TOL: f64 = 1e-8;

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sym_eigen_desc(a: &DMatrix<f64>) -> SymEigen {
    let eig = a.clone().symmetric_eigen();
    let d = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    SymEigen { values, vectors }
}

pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..j {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Moore-Penrose pseudo-inverse with the crate-wide rank cutoff.
pub fn pinv(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    if n == 0 || d == 0 {
        return DMatrix::zeros(d, n);
    }
    let svd = x.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cut = (RANK_TOL * smax * smax).sqrt();
    let mut out = DMatrix::zeros(d, n);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            let v = vt.row(k).transpose();
            let uk = u.column(k);
            out.ger(1.0 / s, &v, &uk, 1.0);
        }
    }
    out
}

/// Symmetric PSD square root; eigenvalues in [-tol, 0] are clamped, below that rejected.
pub fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (r, c) = a.shape();
    if r != c {
        return Err(Error::InvalidInput(format!("psd_sqrt needs a square matrix, got {r}x{c}")));
    }
    let scale = a.amax();
    if scale == 0.0 {
        return Ok(DMatrix::zeros(r, c));
    }
    let asym = asymmetry(a);
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let eig = sym_eigen_desc(&symmetrize(a));
    let lmax = eig.values[0].max(0.0);
    let tol = PSD_TOL * lmax;
    let lmin = eig.values[r - 1];
    if lmin < -tol || lmax == 0.0 {
        return Err(Error::NotPsd { value: lmin, tol });
    }
    let roots = eig.values.map(|v| v.max(0.0).sqrt());
    Ok(scaled_outer(&eig.vectors, &roots))
}

/// V diag(w) Vᵀ.
pub fn scaled_outer(v: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut vw = v.clone();
    for (j, mut col) in vw.column_iter_mut().enumerate() {
        col *= w[j];
    }
    vw * v.transpose()
}

/// Euclidean distance from `v` to the column span of the orthonormal matrix `basis`.
pub fn dist_to_span(basis: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let coef = basis.tr_mul(v);
    (v - basis * coef).norm()
}

/// Orthonormal basis of the row space of `x` (range of Xᵀ).
pub fn row_space_basis(x: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = x.clone().svd(false, true);
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cut = (RANK_TOL * smax * smax).sqrt();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > cut && svd.singular_values[k] > 0.0)
        .collect();
    let mut basis = DMatrix::zeros(x.ncols(), keep.len());
    for (j, &k) in keep.iter().enumerate() {
        basis.set_column(j, &vt.row(k).transpose());
    }
    basis
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
        return Err(Error::InvalidInput(format!(
            "{what}: row {i} has length {}, expected {d}",
            r.len()
        )));
    }
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

pub fn all_finite<'a>(it: impl IntoIterator<Item = &'a f64>) -> bool {
    it.into_iter().all(|v| v.is_finite())
}
