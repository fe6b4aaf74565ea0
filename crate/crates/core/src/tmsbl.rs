//! T-MSBL: the T-SBL updates mapped back to the N×M problem space.
//!
//! Replacing `(λI_NL + (ΦΓΦᵀ) ⊗ B)⁻¹` by `(λI_N + ΦΓΦᵀ)⁻¹ ⊗ B⁻¹` collapses the
//! block posterior to the MSBL quantities `X` and `Ξ_x`; the only changes from
//! MSBL are the Mahalanobis row measure `X_i B⁻¹ X_iᵀ` in the γ rule and the
//! estimate of `B` itself. Every iteration is `O(N²M + ML²)`; nothing of size
//! NL×ML is formed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SblError};
use crate::linalg;
use crate::model::{active_indices, weighted_gram, Hyperparams, MmvProblem, SolverResult};
use crate::msbl::reduced_moments;
use crate::tsbl::{initial_lambda, LambdaPolicy, LAMBDA_FLOOR};

/// How `B` is estimated each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BPolicy {
    /// `B̃ = Σ X_iᵀX_i/γ_i`, then `B = B̃/‖B̃‖_F`.
    Plain,
    /// `B̃ = Σ X_iᵀX_i/γ_i + ηI`, then normalized.
    Regularized { eta: f64 },
    /// `B = I` throughout (reduces T-MSBL to MSBL).
    PinnedIdentity,
}

/// Operating regime declared by the caller; selects a preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Noiseless,
    /// SNR above 20 dB.
    HighSnr,
    /// SNR in (15, 20] dB.
    ModerateSnr,
    /// SNR at or below 15 dB.
    LowSnr,
}

impl Regime {
    pub fn from_snr_db(snr_db: f64) -> Self {
        if snr_db.is_infinite() && snr_db > 0.0 {
            Regime::Noiseless
        } else if snr_db > 20.0 {
            Regime::HighSnr
        } else if snr_db > 15.0 {
            Regime::ModerateSnr
        } else {
            Regime::LowSnr
        }
    }
}

/// Fixed noise variance used for noiseless runs.
pub const NOISELESS_LAMBDA: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmsblOptions {
    pub max_iters: usize,
    pub gamma_tol: f64,
    pub prune_thresh: f64,
    pub lambda_policy: LambdaPolicy,
    pub init_gamma: f64,
    pub b_policy: BPolicy,
    /// Zero the off-diagonal of `ΦΓΦᵀ` in the trace term of the λ rule.
    pub low_snr_lambda_mod: bool,
    /// Pin `B = I` for good once fewer than N indices remain active.
    pub b_identity_switch: bool,
}

impl Default for TmsblOptions {
    fn default() -> Self {
        Self::preset(Regime::Noiseless)
    }
}

impl TmsblOptions {
    pub fn preset(regime: Regime) -> Self {
        let base = Self {
            max_iters: 2000,
            gamma_tol: 1e-8,
            prune_thresh: 1e-5,
            lambda_policy: LambdaPolicy::Learned,
            init_gamma: 1.0,
            b_policy: BPolicy::Plain,
            low_snr_lambda_mod: false,
            b_identity_switch: false,
        };
        match regime {
            Regime::Noiseless => Self {
                lambda_policy: LambdaPolicy::Fixed(NOISELESS_LAMBDA),
                ..base
            },
            Regime::HighSnr => base,
            Regime::ModerateSnr => Self {
                low_snr_lambda_mod: true,
                ..base
            },
            Regime::LowSnr => Self {
                low_snr_lambda_mod: true,
                b_policy: BPolicy::Regularized { eta: 2.0 },
                b_identity_switch: true,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(SblError::InvalidOptions("max_iters must be >= 1".into()));
        }
        if !(self.prune_thresh > 0.0) || !(self.gamma_tol > 0.0) || !(self.init_gamma > 0.0) {
            return Err(SblError::InvalidOptions(
                "prune_thresh, gamma_tol and init_gamma must be > 0".into(),
            ));
        }
        if let BPolicy::Regularized { eta } = self.b_policy {
            if !(eta > 0.0) {
                return Err(SblError::InvalidOptions("eta must be > 0".into()));
            }
        }
        if let LambdaPolicy::Fixed(v) = self.lambda_policy {
            if !(v > 0.0) {
                return Err(SblError::InvalidOptions("fixed lambda must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// `γ_i = X_i B⁻¹ X_iᵀ / L + (Ξ_x)_ii` for every row.
pub fn tmsbl_gamma_update(
    x_cur: &DMatrix<f64>,
    xi_diag: &DVector<f64>,
    b_inv: &DMatrix<f64>,
) -> DVector<f64> {
    let l = x_cur.ncols() as f64;
    DVector::from_fn(x_cur.nrows(), |i, _| {
        let row = x_cur.row(i);
        let quad = (row * b_inv).dot(&row);
        quad / l + xi_diag[i]
    })
}

/// Normalized estimate of the temporal correlation matrix from the rows
/// with `γ_i > 0`. Returns [`SblError::SingularB`] if the plain estimate is
/// singular; the caller is expected to fall back to the regularized rule.
pub fn estimate_b(
    x_cur: &DMatrix<f64>,
    gamma: &DVector<f64>,
    policy: BPolicy,
) -> Result<DMatrix<f64>> {
    let l = x_cur.ncols();
    let eta = match policy {
        BPolicy::PinnedIdentity => return Ok(DMatrix::identity(l, l)),
        BPolicy::Plain => 0.0,
        BPolicy::Regularized { eta } => eta,
    };
    let active = active_indices(gamma);
    if active.is_empty() {
        return Err(SblError::AllPruned);
    }
    let mut bt = DMatrix::zeros(l, l);
    for &i in &active {
        let row = x_cur.row(i).transpose();
        bt.ger(1.0 / gamma[i], &row, &row, 1.0);
    }
    for d in 0..l {
        bt[(d, d)] += eta;
    }
    linalg::symmetrize(&mut bt);
    if policy == BPolicy::Plain && is_singular(&bt) {
        return Err(SblError::SingularB);
    }
    let norm = bt.norm();
    Ok(bt / norm)
}

fn is_singular(m: &DMatrix<f64>) -> bool {
    let scale = m.amax();
    if !(scale > 0.0) {
        return true;
    }
    let Some((eig, _)) = linalg::psd_eigen(m) else {
        return true;
    };
    let hi = eig.max();
    let lo = eig.min();
    !(lo > 1e-14 * hi) || linalg::factor_spd_strict(m, "B̃").is_err()
}

/// Noise update in the reduced space:
/// `‖Y − ΦX‖²_F/(NL) + (λ_prev/N)·Tr[ΦΓΦᵀ(λ_prev I + ΦΓΦᵀ)⁻¹]`, with `ΦΓΦᵀ`
/// replaced by its diagonal inside the trace when `low_snr_mod` is set.
pub fn tmsbl_lambda_update(
    problem: &MmvProblem,
    x_cur: &DMatrix<f64>,
    gamma: &DVector<f64>,
    lambda_prev: f64,
    low_snr_mod: bool,
) -> Result<f64> {
    if !(lambda_prev > 0.0) {
        return Err(SblError::InvalidHyperparams(
            "lambda_prev must be positive".into(),
        ));
    }
    let (n, l) = (problem.n(), problem.l());
    let resid = (&problem.y - &problem.phi * x_cur).norm_squared() / (n * l) as f64;
    let active = active_indices(gamma);
    let a = weighted_gram(&problem.phi, gamma, &active);
    let trace = if low_snr_mod {
        (0..n)
            .map(|d| a[(d, d)] / (lambda_prev + a[(d, d)]))
            .sum::<f64>()
    } else {
        // Tr[A(λI + A)⁻¹] = N − λ·Tr[(λI + A)⁻¹].
        let mut s = a;
        for d in 0..n {
            s[(d, d)] += lambda_prev;
        }
        let chol = linalg::factor_spd(&s, "λI + ΦΓΦᵀ")?;
        let inv_l = chol
            .l_dirty()
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("triangular solve");
        n as f64 - lambda_prev * inv_l.norm_squared()
    };
    Ok(resid + lambda_prev / n as f64 * trace)
}

/// Iterator-style T-MSBL state.
#[derive(Debug, Clone)]
pub struct TmsblState<'a> {
    problem: &'a MmvProblem,
    opts: TmsblOptions,
    gamma: DVector<f64>,
    b: DMatrix<f64>,
    lambda: f64,
    x: DMatrix<f64>,
    b_pinned: bool,
    iterations: usize,
    last_delta: f64,
    warnings: Vec<String>,
    peak: usize,
}

impl<'a> TmsblState<'a> {
    pub fn new(problem: &'a MmvProblem, opts: &TmsblOptions) -> Result<Self> {
        opts.validate()?;
        let l = problem.l();
        Ok(Self {
            problem,
            opts: opts.clone(),
            gamma: DVector::from_element(problem.m(), opts.init_gamma),
            b: DMatrix::identity(l, l),
            lambda: initial_lambda(problem, opts.lambda_policy),
            x: DMatrix::zeros(problem.m(), l),
            b_pinned: opts.b_policy == BPolicy::PinnedIdentity,
            iterations: 0,
            last_delta: f64::INFINITY,
            warnings: Vec::new(),
            peak: 0,
        })
    }

    pub fn gamma(&self) -> &DVector<f64> {
        &self.gamma
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn b_pinned(&self) -> bool {
        self.b_pinned
    }

    pub fn peak_dense_elems(&self) -> usize {
        self.peak
    }

    pub fn is_converged(&self) -> bool {
        self.last_delta < self.opts.gamma_tol || self.gamma.iter().all(|&g| g == 0.0)
    }

    /// Updates in order: X, Ξ_x, B, γ, λ; then pruning.
    pub fn step(&mut self) -> Result<()> {
        if self.gamma.iter().all(|&g| g == 0.0) {
            return Err(SblError::AllPruned);
        }
        let rm = reduced_moments(self.problem, &self.gamma, self.lambda)?;
        let l = self.problem.l();

        self.b = if self.b_pinned {
            DMatrix::identity(l, l)
        } else {
            match estimate_b(&rm.x, &self.gamma, self.opts.b_policy) {
                Ok(b) => b,
                Err(SblError::SingularB) => {
                    let raw_trace = raw_b_trace(&rm.x, &self.gamma);
                    let eta = (1e-6 * raw_trace / l as f64).max(f64::MIN_POSITIVE);
                    self.warnings.push(format!(
                        "iteration {}: plain B estimate singular, regularized with eta={eta:e}",
                        self.iterations + 1
                    ));
                    estimate_b(&rm.x, &self.gamma, BPolicy::Regularized { eta })?
                }
                Err(e) => return Err(e),
            }
        };
        let b_chol = linalg::factor_spd(&self.b, "B")?;
        let b_inv = b_chol.inverse();

        let mut next = tmsbl_gamma_update(&rm.x, &rm.xi_diag, &b_inv);
        if self.opts.lambda_policy == LambdaPolicy::Learned {
            self.lambda = tmsbl_lambda_update(
                self.problem,
                &rm.x,
                &self.gamma,
                self.lambda,
                self.opts.low_snr_lambda_mod,
            )?
            .max(LAMBDA_FLOOR);
        }
        for g in next.iter_mut() {
            if *g < self.opts.prune_thresh {
                *g = 0.0;
            }
        }
        self.last_delta = (&next - &self.gamma).amax();
        self.gamma = next;
        self.x = rm.x;
        self.peak = self.peak.max(rm.peak_elems).max(l * l);
        self.iterations += 1;

        if self.opts.b_identity_switch && !self.b_pinned {
            let active = self.gamma.iter().filter(|&&g| g > 0.0).count();
            if active < self.problem.n() {
                self.b_pinned = true;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<SolverResult> {
        let rm = reduced_moments(self.problem, &self.gamma, self.lambda)?;
        let active = active_indices(&self.gamma);
        let converged = self.is_converged();
        Ok(SolverResult {
            x_hat: rm.x,
            active_set: active,
            converged,
            hyper: Hyperparams {
                gamma: self.gamma,
                b: self.b,
                lambda: self.lambda,
            },
            cost_trace: Vec::new(),
            iterations: self.iterations,
            warnings: self.warnings,
            peak_dense_elems: self.peak.max(rm.peak_elems),
        })
    }
}

fn raw_b_trace(x: &DMatrix<f64>, gamma: &DVector<f64>) -> f64 {
    active_indices(gamma)
        .into_iter()
        .map(|i| x.row(i).norm_squared() / gamma[i])
        .sum()
}

pub fn tmsbl_solve(problem: &MmvProblem, opts: &TmsblOptions) -> Result<SolverResult> {
    let mut state = TmsblState::new(problem, opts)?;
    while state.iterations() < opts.max_iters && !state.is_converged() {
        state.step()?;
    }
    state.finish()
}
