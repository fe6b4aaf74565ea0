//! Small dense helpers shared by the solvers.
//!
//! Layout convention: `vec_rows(X)` is `vec(Xᵀ)`, i.e. the rows of `X` laid
//! end to end. With `X` of size M×L, entry `X[i, t]` sits at `i*L + t`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Result, SblError};

pub type Chol = Cholesky<f64, Dyn>;

/// Cholesky factorization with no fallback.
pub fn factor_spd_strict(m: &DMatrix<f64>, what: &'static str) -> Result<Chol> {
    Cholesky::new(m.clone()).ok_or(SblError::NotPositiveDefinite(what))
}

/// Cholesky factorization with a single jitter retry of `1e-10 * trace / dim`
/// added to the diagonal.
pub fn factor_spd(m: &DMatrix<f64>, what: &'static str) -> Result<Chol> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows().max(1);
    let jitter = 1e-10 * m.trace().abs() / n as f64;
    let mut bumped = m.clone();
    for i in 0..m.nrows() {
        bumped[(i, i)] += jitter;
    }
    Cholesky::new(bumped).ok_or(SblError::NotPositiveDefinite(what))
}

/// `log det` from a Cholesky factor.
pub fn chol_logdet(c: &Chol) -> f64 {
    let l = c.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// `vec(Xᵀ)`: concatenates the rows of `x`.
pub fn vec_rows(x: &DMatrix<f64>) -> DVector<f64> {
    let (r, c) = x.shape();
    DVector::from_iterator(r * c, (0..r).flat_map(|i| (0..c).map(move |t| x[(i, t)])))
}

/// Inverse of [`vec_rows`].
pub fn unvec_rows(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), rows * cols, "length mismatch in unvec_rows");
    DMatrix::from_fn(rows, cols, |i, t| v[i * cols + t])
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Smallest eigenvalue of a symmetric matrix (NaN if the solver fails).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    match to_faer(m).self_adjoint_eigenvalues(faer::Side::Lower) {
        Ok(v) => v.into_iter().fold(f64::INFINITY, f64::min),
        Err(_) => f64::NAN,
    }
}

/// Singular values in nonincreasing order, or `None` if the SVD fails to
/// converge.
pub fn singular_values(m: &DMatrix<f64>) -> Option<Vec<f64>> {
    if m.is_empty() {
        return Some(Vec::new());
    }
    to_faer(m).singular_values().ok()
}

/// `M = V diag(w) Vᵀ` for symmetric positive semidefinite `M`, eigenvalues
/// ascending. nalgebra's `symmetric_eigen` and SVD can lose ~1e-4 relative
/// accuracy on small, well-posed inputs, so this goes through faer.
/// Returns `None` if `M` has an eigenvalue below `-1e-12·‖M‖₂`.
pub fn psd_eigen(m: &DMatrix<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n == 0 {
        return Some((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let eig = to_faer(m).self_adjoint_eigen(faer::Side::Lower).ok()?;
    let (s, u) = (eig.S().column_vector(), eig.U());
    let vals = DVector::from_fn(n, |i, _| s[i]);
    let top = vals.amax();
    if !vals.iter().all(|w| w.is_finite()) || vals.iter().any(|&w| w < -1e-12 * top) {
        return None;
    }
    Some((vals, DMatrix::from_fn(n, n, |i, j| u[(i, j)])))
}

/// Symmetric within `tol` relative to the largest entry.
pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    (0..n).all(|i| (i + 1..n).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale))
}

pub fn row_norms(x: &DMatrix<f64>) -> Vec<f64> {
    x.row_iter().map(|r| r.norm()).collect()
}
