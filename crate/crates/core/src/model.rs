//! Problem and hyperparameter types plus the block-model computations
//! (Kronecker dictionary, marginal cost, posterior moments, MAP estimate).
//!
//! The MMV model `Y = ΦX + V` is handled through its block form
//! `y = D x + v` with `y = vec(Yᵀ)`, `x = vec(Xᵀ)` and `D = Φ ⊗ I_L`. The
//! prior covariance is `Σ0 = Γ ⊗ B`, so `D Σ0 Dᵀ = (ΦΓΦᵀ) ⊗ B` and every
//! computation here works with NL×NL objects at most. The ML×ML posterior
//! covariance is never formed; only its M diagonal L×L blocks are returned.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SblError};
use crate::linalg::{self, Chol};

/// Default cap on the number of elements of `Φ ⊗ I_L`.
pub const DEFAULT_BLOCK_DICTIONARY_CAP: usize = 16 * 1024 * 1024;

/// Ground truth attached to generated problems.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub x_gen: DMatrix<f64>,
    /// Sorted indices of the nonzero rows of `x_gen`.
    pub support: Vec<usize>,
    /// `f64::INFINITY` for noiseless problems.
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmvProblem {
    pub phi: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub truth: Option<GroundTruth>,
}

impl MmvProblem {
    pub fn new(phi: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        let (n, m) = phi.shape();
        if n == 0 || y.ncols() == 0 {
            return Err(SblError::Dimension(format!(
                "need N >= 1 and L >= 1, got N={n}, L={}",
                y.ncols()
            )));
        }
        if m < n {
            return Err(SblError::Dimension(format!(
                "need M >= N, got N={n}, M={m}"
            )));
        }
        if y.nrows() != n {
            return Err(SblError::Dimension(format!(
                "Y has {} rows but Φ has {n}",
                y.nrows()
            )));
        }
        if phi.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(SblError::Dimension("non-finite entry in Φ or Y".into()));
        }
        Ok(Self {
            phi,
            y,
            truth: None,
        })
    }

    pub fn with_truth(mut self, truth: GroundTruth) -> Result<Self> {
        if truth.x_gen.shape() != (self.m(), self.l()) {
            return Err(SblError::Dimension(format!(
                "x_gen is {:?}, expected {:?}",
                truth.x_gen.shape(),
                (self.m(), self.l())
            )));
        }
        for (i, row) in truth.x_gen.row_iter().enumerate() {
            let nonzero = row.iter().any(|&v| v != 0.0);
            if nonzero != truth.support.binary_search(&i).is_ok() {
                return Err(SblError::Dimension(format!(
                    "row {i} of x_gen disagrees with the support"
                )));
            }
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn m(&self) -> usize {
        self.phi.ncols()
    }

    pub fn l(&self) -> usize {
        self.y.ncols()
    }

    /// True when every dictionary column has unit Euclidean norm (to `tol`).
    /// Generated problems always satisfy this; user input is only flagged.
    pub fn has_unit_columns(&self, tol: f64) -> bool {
        self.phi
            .column_iter()
            .all(|c| (c.norm() - 1.0).abs() <= tol)
    }
}

/// The hyperparameter set `{γ, B, λ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub gamma: DVector<f64>,
    pub b: DMatrix<f64>,
    pub lambda: f64,
}

impl Hyperparams {
    pub fn new(gamma: DVector<f64>, b: DMatrix<f64>, lambda: f64) -> Result<Self> {
        let h = Self { gamma, b, lambda };
        h.validate()?;
        Ok(h)
    }

    /// `γ = init_gamma · 1`, `B = I_L`.
    pub fn flat(m: usize, l: usize, init_gamma: f64, lambda: f64) -> Self {
        Self {
            gamma: DVector::from_element(m, init_gamma),
            b: DMatrix::identity(l, l),
            lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(g) = self.gamma.iter().find(|g| !(**g >= 0.0) || !g.is_finite()) {
            return Err(SblError::InvalidHyperparams(format!(
                "gamma entry {g} is not >= 0"
            )));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(SblError::InvalidHyperparams(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !linalg::is_symmetric(&self.b, 1e-12) {
            return Err(SblError::InvalidHyperparams("B is not symmetric".into()));
        }
        if linalg::factor_spd_strict(&self.b, "B").is_err() {
            return Err(SblError::InvalidHyperparams(
                "B is not positive definite".into(),
            ));
        }
        Ok(())
    }

    /// Indices with `γ_i > 0`.
    pub fn active_set(&self) -> Vec<usize> {
        active_indices(&self.gamma)
    }

    /// Dense `Σ0 = Γ ⊗ B` (ML×ML); reference use only.
    pub fn prior_covariance(&self) -> DMatrix<f64> {
        linalg::kron(&DMatrix::from_diagonal(&self.gamma), &self.b)
    }

    fn check_against(&self, problem: &MmvProblem) -> Result<()> {
        if self.gamma.len() != problem.m() || self.b.shape() != (problem.l(), problem.l()) {
            return Err(SblError::Dimension(format!(
                "hyperparameters sized for M={}, L={} but problem has M={}, L={}",
                self.gamma.len(),
                self.b.nrows(),
                problem.m(),
                problem.l()
            )));
        }
        self.validate()
    }
}

pub(crate) fn active_indices(gamma: &DVector<f64>) -> Vec<usize> {
    gamma
        .iter()
        .enumerate()
        .filter(|(_, &g)| g > 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Posterior mean and the diagonal L×L blocks of the posterior covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    /// `μ_x`, length ML, laid out as `vec(Xᵀ)`.
    pub mu_x: DVector<f64>,
    /// `Σ_x^i`, one L×L block per source.
    pub sigma_blocks: Vec<DMatrix<f64>>,
}

impl PosteriorMoments {
    /// `μ_x` reshaped to M×L; row i is `(μ_x^i)ᵀ`.
    pub fn mean_matrix(&self) -> DMatrix<f64> {
        let m = self.sigma_blocks.len();
        let l = self.mu_x.len() / m.max(1);
        linalg::unvec_rows(&self.mu_x, m, l)
    }

    pub fn mean_block(&self, i: usize) -> DVector<f64> {
        let l = self.sigma_blocks[i].nrows();
        self.mu_x.rows(i * l, l).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    /// Recovered M×L source matrix.
    pub x_hat: DMatrix<f64>,
    pub hyper: Hyperparams,
    pub active_set: Vec<usize>,
    /// Marginal cost per iteration; empty for solvers that do not evaluate it.
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
    /// Element count of the largest dense matrix formed during the solve.
    pub peak_dense_elems: usize,
}

impl SolverResult {
    pub fn gamma_cardinality(&self) -> usize {
        self.active_set.len()
    }
}

/// `D = Φ ⊗ I_L` with the default size cap.
pub fn build_block_dictionary(phi: &DMatrix<f64>, l: usize) -> Result<DMatrix<f64>> {
    build_block_dictionary_capped(phi, l, DEFAULT_BLOCK_DICTIONARY_CAP)
}

pub fn build_block_dictionary_capped(
    phi: &DMatrix<f64>,
    l: usize,
    cap: usize,
) -> Result<DMatrix<f64>> {
    if l == 0 {
        return Err(SblError::Dimension("L must be >= 1".into()));
    }
    let rows = phi.nrows() * l;
    let cols = phi.ncols() * l;
    match rows.checked_mul(cols) {
        Some(total) if total <= cap => Ok(linalg::kron(phi, &DMatrix::identity(l, l))),
        _ => Err(SblError::BlockDictionaryTooLarge { rows, cols, cap }),
    }
}

/// `ΦΓΦᵀ` restricted to the given columns.
pub(crate) fn weighted_gram(
    phi: &DMatrix<f64>,
    gamma: &DVector<f64>,
    active: &[usize],
) -> DMatrix<f64> {
    let n = phi.nrows();
    let mut a = DMatrix::zeros(n, n);
    for &i in active {
        let col = phi.column(i);
        a.ger(gamma[i], &col, &col, 1.0);
    }
    a
}

/// `Σ_y = λ I_NL + (ΦΓΦᵀ) ⊗ B`.
pub(crate) fn marginal_covariance(problem: &MmvProblem, hyper: &Hyperparams) -> DMatrix<f64> {
    let active = hyper.active_set();
    let a = weighted_gram(&problem.phi, &hyper.gamma, &active);
    let mut sigma_y = linalg::kron(&a, &hyper.b);
    for d in 0..sigma_y.nrows() {
        sigma_y[(d, d)] += hyper.lambda;
    }
    sigma_y
}

/// Marginal negative log-likelihood (up to constants):
/// `yᵀ Σ_y⁻¹ y + log|Σ_y|`.
pub fn cost(problem: &MmvProblem, hyper: &Hyperparams) -> Result<f64> {
    hyper.check_against(problem)?;
    let sigma_y = marginal_covariance(problem, hyper);
    let chol = linalg::factor_spd_strict(&sigma_y, "Σ_y")?;
    let y = linalg::vec_rows(&problem.y);
    let w = chol
        .l_dirty()
        .solve_lower_triangular(&y)
        .expect("triangular solve");
    Ok(w.norm_squared() + linalg::chol_logdet(&chol))
}

struct BlockSystem {
    active: Vec<usize>,
    chol: Chol,
    /// `Σ_y⁻¹ y` reshaped to N×L.
    z: DMatrix<f64>,
}

impl BlockSystem {
    fn new(problem: &MmvProblem, hyper: &Hyperparams) -> Result<Self> {
        hyper.check_against(problem)?;
        let active = hyper.active_set();
        let sigma_y = marginal_covariance(problem, hyper);
        let chol = linalg::factor_spd(&sigma_y, "Σ_y")?;
        let zv = chol.solve(&linalg::vec_rows(&problem.y));
        let z = linalg::unvec_rows(&zv, problem.n(), problem.l());
        Ok(Self { active, chol, z })
    }

    /// Rows `μ_x^i = γ_i B Σ_n φ_{ni} Z[n, :]`, zero for inactive rows.
    fn mean(&self, problem: &MmvProblem, hyper: &Hyperparams) -> DMatrix<f64> {
        let phit_z = problem.phi.transpose() * &self.z;
        let mut x = DMatrix::zeros(problem.m(), problem.l());
        for &i in &self.active {
            let row = (phit_z.row(i) * &hyper.b) * hyper.gamma[i];
            x.set_row(i, &row);
        }
        x
    }
}

/// Posterior moments of `x` given `y` (second form of the covariance
/// identity, evaluated blockwise on the active set).
pub fn posterior_moments(problem: &MmvProblem, hyper: &Hyperparams) -> Result<PosteriorMoments> {
    let sys = BlockSystem::new(problem, hyper)?;
    let (n, m, l) = (problem.n(), problem.m(), problem.l());
    let x = sys.mean(problem, hyper);

    let mut blocks = vec![DMatrix::zeros(l, l); m];
    if !sys.active.is_empty() {
        // P = L⁻¹ (Φ_a ⊗ I_L); G_i = P_iᵀ P_i = (φ_i ⊗ I)ᵀ Σ_y⁻¹ (φ_i ⊗ I).
        let ka = sys.active.len();
        let mut rhs = DMatrix::zeros(n * l, ka * l);
        for (c, &i) in sys.active.iter().enumerate() {
            for r in 0..n {
                let v = problem.phi[(r, i)];
                for t in 0..l {
                    rhs[(r * l + t, c * l + t)] = v;
                }
            }
        }
        let p = sys
            .chol
            .l_dirty()
            .solve_lower_triangular(&rhs)
            .expect("triangular solve");
        for (c, &i) in sys.active.iter().enumerate() {
            let pi = p.columns(c * l, l);
            let g = pi.transpose() * pi;
            let gb = &hyper.b * g * &hyper.b;
            let gi = hyper.gamma[i];
            let mut s = &hyper.b * gi - gb * (gi * gi);
            linalg::symmetrize(&mut s);
            blocks[i] = s;
        }
    }
    Ok(PosteriorMoments {
        mu_x: linalg::vec_rows(&x),
        sigma_blocks: blocks,
    })
}

/// MAP estimate `x* = Σ0 Dᵀ (λI + DΣ0Dᵀ)⁻¹ y`, reshaped to M×L.
/// Rows with `γ_i = 0` are exactly zero.
pub fn map_estimate(problem: &MmvProblem, hyper: &Hyperparams) -> Result<DMatrix<f64>> {
    let sys = BlockSystem::new(problem, hyper)?;
    Ok(sys.mean(problem, hyper))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_problem(y: f64) -> MmvProblem {
        MmvProblem::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, y),
        )
        .unwrap()
    }

    #[test]
    fn block_dictionary_small_cases() {
        let d = build_block_dictionary(&DMatrix::from_element(1, 1, 2.0), 2).unwrap();
        assert_eq!(d, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]));
        let d = build_block_dictionary(&DMatrix::identity(2, 2), 3).unwrap();
        assert_eq!(d, DMatrix::identity(6, 6));
    }

    #[test]
    fn block_dictionary_cap_and_zero_l() {
        let phi = DMatrix::from_element(10, 20, 1.0);
        assert!(matches!(
            build_block_dictionary_capped(&phi, 4, 100),
            Err(SblError::BlockDictionaryTooLarge {
                rows: 40,
                cols: 80,
                cap: 100
            })
        ));
        assert!(build_block_dictionary(&phi, 0).is_err());
    }

    #[test]
    fn block_dictionary_entries() {
        let phi = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.25, -1.0]);
        let l = 2;
        let d = build_block_dictionary(&phi, l).unwrap();
        for n in 0..2 {
            for m in 0..3 {
                for s in 0..l {
                    for t in 0..l {
                        let expect = if s == t { phi[(n, m)] } else { 0.0 };
                        assert_eq!(d[(n * l + s, m * l + t)], expect);
                    }
                }
            }
        }
    }

    #[test]
    fn cost_scalar_cases() {
        // Σ_y = 1 (λ tiny): 4 + log 1.
        let h = Hyperparams::new(
            DVector::from_element(1, 1.0),
            DMatrix::identity(1, 1),
            1e-300,
        )
        .unwrap();
        assert!((cost(&scalar_problem(2.0), &h).unwrap() - 4.0).abs() < 1e-12);
        // Σ_y = λ = 3.
        let h =
            Hyperparams::new(DVector::from_element(1, 0.0), DMatrix::identity(1, 1), 3.0).unwrap();
        let expect = 4.0 / 3.0 + 3f64.ln();
        assert!((cost(&scalar_problem(2.0), &h).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_gamma_pins_posterior_at_zero() {
        let phi = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.6, 0.0, 1.0, 0.8]);
        let y = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let p = MmvProblem::new(phi, y).unwrap();
        let h = Hyperparams::flat(3, 2, 0.0, 0.5);
        let post = posterior_moments(&p, &h).unwrap();
        assert!(post.mu_x.iter().all(|&v| v == 0.0));
        assert!(post
            .sigma_blocks
            .iter()
            .all(|b| b.iter().all(|&v| v == 0.0)));
        assert!(map_estimate(&p, &h).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noiseless_identity_system_recovers_y() {
        let y = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.25, -1.0]);
        let p = MmvProblem::new(DMatrix::identity(2, 2), y.clone()).unwrap();
        let h = Hyperparams::flat(2, 3, 1.0, 1e-12);
        let post = posterior_moments(&p, &h).unwrap();
        assert!((post.mean_matrix() - &y).amax() < 1e-6);
    }

    #[test]
    fn determined_system_map_is_inverse() {
        let phi = DMatrix::from_row_slice(2, 2, &[0.8, 0.6, -0.6, 0.8]);
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let p = MmvProblem::new(phi.clone(), &phi * &x).unwrap();
        let h = Hyperparams::new(
            DVector::from_vec(vec![2.0, 0.7]),
            DMatrix::identity(2, 2),
            1e-12,
        )
        .unwrap();
        assert!((map_estimate(&p, &h).unwrap() - x).amax() < 1e-9);
    }

    #[test]
    fn problem_rejects_bad_shapes() {
        assert!(MmvProblem::new(DMatrix::zeros(3, 2), DMatrix::zeros(3, 1)).is_err());
        assert!(MmvProblem::new(DMatrix::zeros(2, 3), DMatrix::zeros(3, 1)).is_err());
        assert!(MmvProblem::new(DMatrix::zeros(2, 3), DMatrix::zeros(2, 0)).is_err());
    }

    #[test]
    fn hyperparams_validation() {
        let b = DMatrix::identity(2, 2);
        assert!(Hyperparams::new(DVector::from_vec(vec![-1.0]), b.clone(), 1.0).is_err());
        assert!(Hyperparams::new(DVector::from_vec(vec![1.0]), b.clone(), 0.0).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(Hyperparams::new(DVector::from_vec(vec![1.0]), asym, 1.0).is_err());
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(Hyperparams::new(DVector::from_vec(vec![1.0]), indef, 1.0).is_err());
    }

    #[test]
    fn truth_must_match_support() {
        let p = MmvProblem::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 1)).unwrap();
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let ok = GroundTruth {
            x_gen: x.clone(),
            support: vec![1],
            snr_db: f64::INFINITY,
        };
        assert!(p.clone().with_truth(ok).is_ok());
        let bad = GroundTruth {
            x_gen: x,
            support: vec![0],
            snr_db: f64::INFINITY,
        };
        assert!(p.with_truth(bad).is_err());
    }
}
