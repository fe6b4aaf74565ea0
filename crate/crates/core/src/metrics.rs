//! Recovery metrics and theory checks.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SblError};
use crate::linalg::{self, kron, row_norms};
use crate::model::{cost, Hyperparams, MmvProblem, SolverResult};

/// Relative threshold below which a row counts as zero.
pub const ROW_ZERO_REL: f64 = 1e-8;
/// Largest `NL` accepted by [`approx_error`].
pub const APPROX_ERROR_MAX_DIM: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureRule {
    /// Set of nonzero rows must equal the true support.
    Noiseless,
    /// The `k` rows with largest norm must equal the true support.
    Noisy,
}

impl FailureRule {
    pub fn for_snr(snr_db: f64) -> Self {
        if snr_db == f64::INFINITY {
            Self::Noiseless
        } else {
            Self::Noisy
        }
    }
}

/// Indices of rows whose norm exceeds `ROW_ZERO_REL` times the largest.
pub fn nonzero_rows(x: &DMatrix<f64>) -> Vec<usize> {
    let norms = row_norms(x);
    let max = norms.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Vec::new();
    }
    norms
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > ROW_ZERO_REL * max)
        .map(|(i, _)| i)
        .collect()
}

/// Indices of the `k` largest-norm rows (ties broken by lower index).
pub fn top_k_rows(x: &DMatrix<f64>, k: usize) -> Vec<usize> {
    let norms = row_norms(x);
    let mut idx: Vec<usize> = (0..norms.len()).collect();
    idx.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

pub fn is_failure(x_hat: &DMatrix<f64>, true_support: &[usize], rule: FailureRule) -> bool {
    let truth: BTreeSet<usize> = true_support.iter().copied().collect();
    let found: BTreeSet<usize> = match rule {
        FailureRule::Noiseless => nonzero_rows(x_hat).into_iter().collect(),
        FailureRule::Noisy => top_k_rows(x_hat, truth.len()).into_iter().collect(),
    };
    found != truth
}

/// `‖X̂ − X‖²_F / ‖X‖²_F`.
pub fn mse(x_hat: &DMatrix<f64>, x_gen: &DMatrix<f64>) -> Result<f64> {
    if x_hat.shape() != x_gen.shape() {
        return Err(SblError::Dimension(
            "estimate and truth differ in shape".into(),
        ));
    }
    let denom = x_gen.norm_squared();
    if !(denom > 0.0) {
        return Err(SblError::Dimension(
            "reference source matrix is zero".into(),
        ));
    }
    Ok((x_hat - x_gen).norm_squared() / denom)
}

/// Ratio of extreme singular values of the rows of `x_gen` on `support`;
/// `f64::INFINITY` if numerically rank deficient.
pub fn source_condition_number(x_gen: &DMatrix<f64>, support: &[usize]) -> Result<f64> {
    if support.is_empty() {
        return Err(SblError::Dimension("empty support".into()));
    }
    if support.iter().any(|&i| i >= x_gen.nrows()) {
        return Err(SblError::Dimension("support index out of range".into()));
    }
    let sub = x_gen.select_rows(support.iter());
    let sv = linalg::singular_values(&sub).ok_or(SblError::NotConverged("SVD"))?;
    let hi = sv.iter().copied().fold(0.0, f64::max);
    let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = hi * f64::EPSILON * sub.nrows().max(sub.ncols()) as f64;
    if !(lo > tol) {
        return Ok(f64::INFINITY);
    }
    Ok(hi / lo)
}

/// `γ̂_i = X̃_i B⁻¹ X̃_iᵀ / L` where `X̃` solves `Φ_S X̃ = Y` on the support.
/// Fails with [`SblError::Inconsistent`] if the relative residual exceeds 1e-8.
pub fn lemma3_gamma(
    phi: &DMatrix<f64>,
    y: &DMatrix<f64>,
    support: &[usize],
    b: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let (n, m) = phi.shape();
    let l = y.ncols();
    if y.nrows() != n || b.shape() != (l, l) {
        return Err(SblError::Dimension("shapes of Φ, Y and B disagree".into()));
    }
    if support.is_empty() || support.len() > n || support.iter().any(|&i| i >= m) {
        return Err(SblError::Dimension(format!(
            "support must have 1..={n} valid indices"
        )));
    }
    let sub = phi.select_columns(support.iter());
    let svd = sub.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(svd.singular_values.min() > smax * 1e-12) {
        return Err(SblError::Dimension(
            "restricted dictionary is rank deficient".into(),
        ));
    }
    let x = svd
        .solve(y, 0.0)
        .map_err(|e| SblError::Dimension(e.to_string()))?;
    let scale = y.norm().max(f64::MIN_POSITIVE);
    let residual = (&sub * &x - y).norm() / scale;
    if residual > 1e-8 {
        return Err(SblError::Inconsistent { residual });
    }
    let b_inv = linalg::factor_spd_strict(b, "B")?.inverse();
    Ok(DVector::from_fn(support.len(), |i, _| {
        let row = x.row(i);
        (row * &b_inv).dot(&row) / l as f64
    }))
}

/// Relative Frobenius error of `(λI + A⊗B)⁻¹ ≈ (λI + A)⁻¹ ⊗ B⁻¹` with
/// `A = ΦΓΦᵀ`, from dense matrices. `lambda` may be zero if `A` is invertible.
pub fn approx_error(
    phi: &DMatrix<f64>,
    gamma: &DVector<f64>,
    b: &DMatrix<f64>,
    lambda: f64,
) -> Result<f64> {
    let (n, m) = phi.shape();
    let l = b.nrows();
    if gamma.len() != m || b.ncols() != l {
        return Err(SblError::Dimension("shapes of Φ, γ and B disagree".into()));
    }
    if n * l > APPROX_ERROR_MAX_DIM {
        return Err(SblError::Dimension(format!(
            "NL = {} exceeds {APPROX_ERROR_MAX_DIM}",
            n * l
        )));
    }
    if !(lambda >= 0.0) {
        return Err(SblError::InvalidHyperparams("lambda must be >= 0".into()));
    }
    let a = phi * DMatrix::from_diagonal(gamma) * phi.transpose();
    let singular = |what: &str| SblError::InvalidHyperparams(format!("{what} is singular"));
    let exact = (DMatrix::identity(n * l, n * l) * lambda + kron(&a, b))
        .try_inverse()
        .ok_or_else(|| singular("λI + A⊗B"))?;
    let left = (DMatrix::identity(n, n) * lambda + a)
        .try_inverse()
        .ok_or_else(|| singular("λI + A"))?;
    let b_inv = b.clone().try_inverse().ok_or_else(|| singular("B"))?;
    let approx = kron(&left, &b_inv);
    Ok((&exact - approx).norm() / exact.norm())
}

/// True iff the solver's nonzero rows are exactly the true support. Under
/// the uniqueness condition `K < (N + L)/2` that support is the sparsest
/// one explaining noiseless data.
pub fn global_min_support_check(
    problem: &MmvProblem,
    result: &SolverResult,
    true_support: &[usize],
) -> Result<bool> {
    let (n, l) = (problem.n(), problem.l());
    if 2 * true_support.len() >= n + l {
        return Err(SblError::InvalidOptions(format!(
            "K = {} does not satisfy K < (N + L)/2 = {}",
            true_support.len(),
            (n + l) as f64 / 2.0
        )));
    }
    Ok(!is_failure(
        &result.x_hat,
        true_support,
        FailureRule::Noiseless,
    ))
}

/// Running tally of `‖γ̂‖₀` against the bound `NL` for converged results.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CardinalityAudit {
    pub checked: usize,
    pub max_card: usize,
    pub violations: usize,
}

impl CardinalityAudit {
    pub fn record(&mut self, gamma_card: usize, converged: bool, n: usize, l: usize) {
        if !converged {
            return;
        }
        self.checked += 1;
        self.max_card = self.max_card.max(gamma_card);
        if gamma_card > n * l {
            self.violations += 1;
        }
    }

    pub fn merge(&mut self, other: &CardinalityAudit) {
        self.checked += other.checked;
        self.max_card = self.max_card.max(other.max_card);
        self.violations += other.violations;
    }

    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

/// Central finite-difference gradient of the marginal cost over `γ_i` for
/// `i ∈ indices`, step `1e-5 · max(γ_i, 1)`. Falls back to a forward
/// difference when the backward point would be negative.
pub fn cost_gradient_fd(
    problem: &MmvProblem,
    hyper: &Hyperparams,
    indices: &[usize],
) -> Result<Vec<f64>> {
    indices
        .iter()
        .map(|&i| {
            if i >= hyper.gamma.len() {
                return Err(SblError::Dimension(format!("index {i} out of range")));
            }
            let g = hyper.gamma[i];
            let h = 1e-5 * g.max(1.0);
            let mut plus = hyper.clone();
            plus.gamma[i] = g + h;
            let mut minus = hyper.clone();
            if g - h >= 0.0 {
                minus.gamma[i] = g - h;
                Ok((cost(problem, &plus)? - cost(problem, &minus)?) / (2.0 * h))
            } else {
                Ok((cost(problem, &plus)? - cost(problem, hyper)?) / h)
            }
        })
        .collect()
}
