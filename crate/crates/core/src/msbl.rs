//! MSBL baseline (temporal correlation ignored, `B = I`), plus the
//! reduced-space moments it shares with T-MSBL.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SblError};
use crate::linalg;
use crate::model::{active_indices, weighted_gram, Hyperparams, MmvProblem, SolverResult};
use crate::tmsbl::tmsbl_lambda_update;
use crate::tsbl::{initial_lambda, LambdaPolicy, TsblOptions, LAMBDA_FLOOR};

/// `X = ΓΦᵀ(λI + ΦΓΦᵀ)⁻¹Y` and `diag(Ξ_x)` with
/// `(Ξ_x)_ii = γ_i − γ_i² φ_iᵀ(λI + ΦΓΦᵀ)⁻¹φ_i`.
#[derive(Debug, Clone)]
pub(crate) struct ReducedMoments {
    pub x: DMatrix<f64>,
    pub xi_diag: DVector<f64>,
    pub peak_elems: usize,
}

pub(crate) fn reduced_moments(
    problem: &MmvProblem,
    gamma: &DVector<f64>,
    lambda: f64,
) -> Result<ReducedMoments> {
    let (n, m, l) = (problem.n(), problem.m(), problem.l());
    let active = active_indices(gamma);
    let mut x = DMatrix::zeros(m, l);
    let mut xi = DVector::zeros(m);
    if active.is_empty() {
        return Ok(ReducedMoments {
            x,
            xi_diag: xi,
            peak_elems: m * l,
        });
    }
    let mut sigma = weighted_gram(&problem.phi, gamma, &active);
    for d in 0..n {
        sigma[(d, d)] += lambda;
    }
    let chol = linalg::factor_spd(&sigma, "λI + ΦΓΦᵀ")?;
    let w = chol.solve(&problem.y);
    let phi_a = problem.phi.select_columns(active.iter());
    let p = chol
        .l_dirty()
        .solve_lower_triangular(&phi_a)
        .expect("triangular solve");
    let phit_w = phi_a.transpose() * w;
    for (col, &i) in active.iter().enumerate() {
        let g = gamma[i];
        x.set_row(i, &(phit_w.row(col) * g));
        let q = p.column(col).norm_squared();
        xi[i] = (g - g * g * q).max(0.0);
    }
    let peak_elems = (n * n).max(n * active.len()).max(m * l);
    Ok(ReducedMoments {
        x,
        xi_diag: xi,
        peak_elems,
    })
}

/// One MSBL step: returns `(γ', X, diag(Ξ_x))` with
/// `γ'_i = ‖X_i‖²/L + (Ξ_x)_ii`.
pub fn msbl_em_step(
    problem: &MmvProblem,
    gamma: &DVector<f64>,
    lambda: f64,
    opts: &TsblOptions,
) -> Result<(DVector<f64>, DMatrix<f64>, DVector<f64>)> {
    opts.validate()?;
    if gamma.len() != problem.m() {
        return Err(SblError::Dimension("gamma length differs from M".into()));
    }
    if !(lambda > 0.0) {
        return Err(SblError::InvalidHyperparams(
            "lambda must be positive".into(),
        ));
    }
    let rm = reduced_moments(problem, gamma, lambda)?;
    let l = problem.l() as f64;
    let new_gamma = DVector::from_fn(problem.m(), |i, _| {
        rm.x.row(i).norm_squared() / l + rm.xi_diag[i]
    });
    Ok((new_gamma, rm.x, rm.xi_diag))
}

/// Iterator-style MSBL state, one EM step per call to [`MsblState::step`].
#[derive(Debug, Clone)]
pub struct MsblState<'a> {
    problem: &'a MmvProblem,
    opts: TsblOptions,
    gamma: DVector<f64>,
    lambda: f64,
    x: DMatrix<f64>,
    iterations: usize,
    last_delta: f64,
    peak: usize,
}

impl<'a> MsblState<'a> {
    pub fn new(problem: &'a MmvProblem, opts: &TsblOptions) -> Result<Self> {
        opts.validate()?;
        Ok(Self {
            problem,
            opts: opts.clone(),
            gamma: DVector::from_element(problem.m(), opts.init_gamma),
            lambda: initial_lambda(problem, opts.lambda_policy),
            x: DMatrix::zeros(problem.m(), problem.l()),
            iterations: 0,
            last_delta: f64::INFINITY,
            peak: 0,
        })
    }

    pub fn gamma(&self) -> &DVector<f64> {
        &self.gamma
    }

    /// Source estimate computed during the most recent step.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn is_converged(&self) -> bool {
        self.last_delta < self.opts.gamma_tol || self.gamma.iter().all(|&g| g == 0.0)
    }

    pub fn step(&mut self) -> Result<()> {
        if self.gamma.iter().all(|&g| g == 0.0) {
            return Err(SblError::AllPruned);
        }
        let rm = reduced_moments(self.problem, &self.gamma, self.lambda)?;
        self.peak = self.peak.max(rm.peak_elems);
        let l = self.problem.l() as f64;
        let mut next = DVector::from_fn(self.problem.m(), |i, _| {
            rm.x.row(i).norm_squared() / l + rm.xi_diag[i]
        });
        if self.opts.lambda_policy == LambdaPolicy::Learned {
            self.lambda =
                tmsbl_lambda_update(self.problem, &rm.x, &self.gamma, self.lambda, false)?
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
        self.iterations += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<SolverResult> {
        let rm = reduced_moments(self.problem, &self.gamma, self.lambda)?;
        let l = self.problem.l();
        Ok(SolverResult {
            x_hat: rm.x,
            active_set: active_indices(&self.gamma),
            converged: self.is_converged(),
            hyper: Hyperparams {
                gamma: self.gamma,
                b: DMatrix::identity(l, l),
                lambda: self.lambda,
            },
            cost_trace: Vec::new(),
            iterations: self.iterations,
            warnings: Vec::new(),
            peak_dense_elems: self.peak.max(rm.peak_elems),
        })
    }
}

pub fn msbl_solve(problem: &MmvProblem, opts: &TsblOptions) -> Result<SolverResult> {
    let mut state = MsblState::new(problem, opts)?;
    while state.iterations() < opts.max_iters && !state.is_converged() {
        state.step()?;
    }
    state.finish()
}
