//! Small dense complex linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const J: C64 = C64::new(0.0, 1.0);

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMatrix::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let s = a[(i, j)];
            if s == C64::new(0.0, 0.0) {
                continue;
            }
            let mut blk = out.view_mut((i * br, j * bc), (br, bc));
            blk.zip_apply(b, |o, v| *o = s * v);
        }
    }
    out
}

/// Column-major vectorization (stack columns).
pub fn vec_cols(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_cols`].
pub fn unvec(v: &[C64], rows: usize) -> CMatrix {
    assert!(rows > 0 && v.len() % rows == 0, "unvec: bad length");
    CMatrix::from_column_slice(rows, v.len() / rows, v)
}

/// `vec(u vᴴ) = conj(v) ⊗ u`, written out directly.
pub fn vec_outer(u: &CVector, v: &CVector) -> CVector {
    let m = u.len();
    let n = v.len();
    let mut out = CVector::zeros(m * n);
    for j in 0..n {
        let c = v[j].conj();
        for i in 0..m {
            out[j * m + i] = u[i] * c;
        }
    }
    out
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

/// Largest absolute deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// `(m + mᴴ)/2`.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).map(|z| z * 0.5)
}

/// Cholesky-backed inverse and log-determinant of a Hermitian positive
/// definite matrix. Returns `None` when the factorization fails.
pub fn hpd_inverse_logdet(m: &CMatrix) -> Option<(CMatrix, f64)> {
    let chol = nalgebra::Cholesky::new(hermitian_part(m))?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.re.ln()).sum::<f64>();
    if !logdet.is_finite() {
        return None;
    }
    Some((chol.inverse(), logdet))
}

pub fn hpd_inverse(m: &CMatrix) -> Option<CMatrix> {
    hpd_inverse_logdet(m).map(|(inv, _)| inv)
}

/// Ascending eigenvalues of a Hermitian matrix.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(hermitian_part(m))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Reciprocal condition number of a Hermitian positive semidefinite matrix
/// (ratio of extreme eigenvalues, 0 for indefinite or zero matrices).
pub fn hpsd_rcond(m: &CMatrix) -> f64 {
    let ev = hermitian_eigenvalues(m);
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if hi <= 0.0 || lo <= 0.0 {
        0.0
    } else {
        lo / hi
    }
}

/// Factor `F` with `F Fᴴ = m` for a Hermitian positive semidefinite `m`,
/// via eigendecomposition so rank-deficient inputs are accepted. Fails when
/// an eigenvalue is below `-tol · max(1, λ_max)`.
pub fn psd_factor(m: &CMatrix, tol: f64) -> Result<CMatrix> {
    let eig = SymmetricEigen::new(hermitian_part(m));
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let lmin = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if lmin < -tol * lmax.max(1.0) {
        return Err(Error::NotPsd { min_eigenvalue: lmin });
    }
    let mut f = eig.eigenvectors.clone();
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        f.column_mut(j).iter_mut().for_each(|z| *z *= s);
    }
    Ok(f)
}

/// Pseudo-inverse of a real symmetric positive semidefinite matrix.
///
/// The matrix is first equilibrated by its diagonal; directions with
/// diagonal below `rcond² · max diagonal` and eigenvalues below
/// `rcond · λ_max` of the equilibrated matrix are treated as null. The
/// diagonal cut matters: a parameter that the model cannot see still picks
/// up roundoff, and equilibration would scale that noise up to `O(1)`.
pub fn psd_pinv(m: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let dmax = (0..n).map(|i| m[(i, i)]).fold(0.0f64, f64::max);
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let d = m[(i, i)];
            if d > rcond * rcond * dmax {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut eq = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            eq[(i, j)] = 0.5 * (m[(i, j)] + m[(j, i)]) * scale[i] * scale[j];
        }
    }
    let eig = SymmetricEigen::new(eq);
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut inv = DMatrix::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > rcond * lmax {
            let u = eig.eigenvectors.column(k);
            inv += (u * u.transpose()) / l;
        }
    }
    for i in 0..n {
        for j in 0..n {
            inv[(i, j)] *= scale[i] * scale[j];
        }
    }
    inv
}

/// Inverse of a real symmetric positive definite matrix with its
/// reciprocal condition number (extreme eigenvalue ratio).
pub fn spd_inverse(m: &DMatrix<f64>) -> (Option<DMatrix<f64>>, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lmin = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let rcond = if lmax > 0.0 && lmin > 0.0 { lmin / lmax } else { 0.0 };
    if rcond == 0.0 {
        return (None, rcond);
    }
    let mut inv = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        let u = eig.eigenvectors.column(k);
        inv += (u * u.transpose()) / l;
    }
    (Some(inv), rcond)
}
