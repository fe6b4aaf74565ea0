//! T-SBL: EM over the block model with a shared temporal correlation matrix.
//!
//! The E-step needs `Σ_y⁻¹` for `Σ_y = λI + A ⊗ B` with `A = ΦΓΦᵀ`. With
//! `A = U diag(a) Uᵀ` and `B = V diag(ω) Vᵀ` this is diagonal in the
//! `U ⊗ V` basis, `Σ_y = (U⊗V) diag(λ + a_n ω_s) (U⊗V)ᵀ`, so each posterior
//! block `Σ_x^i` is diagonal in the `V` basis. A full EM step costs
//! `O(N³ + L³ + N²M + NML)` and is exact (no approximation of `Σ_y⁻¹`).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SblError};
use crate::linalg;
use crate::model::{
    active_indices, weighted_gram, Hyperparams, MmvProblem, PosteriorMoments, SolverResult,
};

/// Learned noise variances never drop below this.
pub const LAMBDA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPolicy {
    Fixed(f64),
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsblOptions {
    pub max_iters: usize,
    /// Stop once `max_i |Δγ_i|` falls below this.
    pub gamma_tol: f64,
    /// Indices with `γ_i` below this are removed for good.
    pub prune_thresh: f64,
    pub lambda_policy: LambdaPolicy,
    pub init_gamma: f64,
}

impl Default for TsblOptions {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            gamma_tol: 1e-8,
            prune_thresh: 1e-5,
            lambda_policy: LambdaPolicy::Learned,
            init_gamma: 1.0,
        }
    }
}

impl TsblOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(SblError::InvalidOptions("max_iters must be >= 1".into()));
        }
        if !(self.prune_thresh > 0.0) {
            return Err(SblError::InvalidOptions("prune_thresh must be > 0".into()));
        }
        if !(self.gamma_tol > 0.0) {
            return Err(SblError::InvalidOptions("gamma_tol must be > 0".into()));
        }
        if !(self.init_gamma > 0.0) {
            return Err(SblError::InvalidOptions("init_gamma must be > 0".into()));
        }
        if let LambdaPolicy::Fixed(v) = self.lambda_policy {
            if !(v > 0.0) {
                return Err(SblError::InvalidOptions("fixed lambda must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Initial noise variance: the fixed value, or `1e-2 · mean(diag(YYᵀ)) / N`
/// (floored) when learned.
pub fn initial_lambda(problem: &MmvProblem, policy: LambdaPolicy) -> f64 {
    match policy {
        LambdaPolicy::Fixed(v) => v,
        LambdaPolicy::Learned => {
            let n = problem.n() as f64;
            let mean_diag = problem.y.norm_squared() / n;
            (1e-2 * mean_diag / n).max(LAMBDA_FLOOR)
        }
    }
}

/// Noise update `(‖y − Dμ_x‖² + λ_prev · Tr(Σ0 Dᵀ Σ_y⁻¹ D)) / (NL)`, where
/// the trace equals `ML − Tr(Σ_x Σ0⁻¹)` on the active set. No floor applied.
pub fn tsbl_lambda_rule(
    resid_sq: f64,
    lambda_prev: f64,
    trace_term: f64,
    n: usize,
    l: usize,
) -> f64 {
    (resid_sq + lambda_prev * trace_term) / (n * l) as f64
}

/// Block posterior evaluated in the eigenbases of `ΦΓΦᵀ` and `B`.
pub(crate) struct SpectralPosterior {
    pub active: Vec<usize>,
    /// Posterior mean as an M×L matrix (inactive rows zero).
    pub x: DMatrix<f64>,
    pub b_vecs: DMatrix<f64>,
    pub b_vals: DVector<f64>,
    /// `Σ_x^i = V diag(sigma_diag[c]) Vᵀ` for `i = active[c]`.
    pub sigma_diag: Vec<DVector<f64>>,
    /// `Tr(Σ0 Dᵀ Σ_y⁻¹ D) = Σ_i γ_i Tr(B G_i)`.
    pub trace_term: f64,
    /// `yᵀΣ_y⁻¹y + log|Σ_y|`.
    pub cost: f64,
    pub peak_elems: usize,
}

impl SpectralPosterior {
    pub fn new(problem: &MmvProblem, hyper: &Hyperparams) -> Result<Self> {
        let (n, m, l) = (problem.n(), problem.m(), problem.l());
        let active = active_indices(&hyper.gamma);
        let a = weighted_gram(&problem.phi, &hyper.gamma, &active);
        let (a_eigs, u) = linalg::psd_eigen(&a).ok_or(SblError::NotPositiveDefinite("ΦΓΦᵀ"))?;
        let (b_vals, v) = linalg::psd_eigen(&hyper.b).ok_or(SblError::NotPositiveDefinite("B"))?;
        if b_vals.iter().any(|&w| !(w > 0.0)) {
            return Err(SblError::NotPositiveDefinite("B"));
        }
        let lam = hyper.lambda;
        let a_vals: Vec<f64> = a_eigs.iter().map(|&v| v.max(0.0)).collect();
        let d = DMatrix::from_fn(n, l, |r, s| lam + a_vals[r] * b_vals[s]);
        if d.iter().any(|&v| !(v > 0.0)) {
            return Err(SblError::NotPositiveDefinite("Σ_y"));
        }

        let y_rot = u.transpose() * &problem.y * &v;
        let z_rot = y_rot.component_div(&d);
        let cost = y_rot.component_mul(&z_rot).sum() + d.iter().map(|x| x.ln()).sum::<f64>();
        // Σ_y⁻¹ y reshaped to N×L.
        let z = &u * &z_rot * v.transpose();

        let phi_a = problem.phi.select_columns(active.iter());
        let c = u.transpose() * &phi_a;
        let phit_z = phi_a.transpose() * &z;

        let mut x = DMatrix::zeros(m, l);
        let mut sigma_diag = Vec::with_capacity(active.len());
        let mut trace_term = 0.0;
        for (col, &i) in active.iter().enumerate() {
            let g = hyper.gamma[i];
            x.set_row(i, &((phit_z.row(col) * &hyper.b) * g));
            let mut sd = DVector::zeros(l);
            for s in 0..l {
                let w = b_vals[s];
                let gis: f64 = (0..n).map(|r| c[(r, col)] * c[(r, col)] / d[(r, s)]).sum();
                // Nonnegative in exact arithmetic; cancels to ~0 when noiseless.
                sd[s] = (g * w - g * g * w * w * gis).max(0.0);
                trace_term += g * w * gis;
            }
            sigma_diag.push(sd);
        }
        let peak_elems = (n * n).max(n * active.len()).max(m * l).max(n * l);
        Ok(Self {
            active,
            x,
            b_vecs: v,
            b_vals,
            sigma_diag,
            trace_term,
            cost,
            peak_elems,
        })
    }

    pub fn sigma_block(&self, col: usize) -> DMatrix<f64> {
        let v = &self.b_vecs;
        let mut s = v * DMatrix::from_diagonal(&self.sigma_diag[col]) * v.transpose();
        linalg::symmetrize(&mut s);
        s
    }

    pub fn to_moments(&self, m: usize) -> PosteriorMoments {
        let l = self.x.ncols();
        let mut blocks = vec![DMatrix::zeros(l, l); m];
        for (col, &i) in self.active.iter().enumerate() {
            blocks[i] = self.sigma_block(col);
        }
        PosteriorMoments {
            mu_x: linalg::vec_rows(&self.x),
            sigma_blocks: blocks,
        }
    }
}

struct StepOutput {
    hyper: Hyperparams,
    post: SpectralPosterior,
}

fn em_update(
    problem: &MmvProblem,
    hyper: &Hyperparams,
    policy: LambdaPolicy,
) -> Result<StepOutput> {
    let (n, l) = (problem.n(), problem.l());
    let post = SpectralPosterior::new(problem, hyper)?;
    if post.active.is_empty() {
        return Err(SblError::AllPruned);
    }
    let v = &post.b_vecs;

    // γ_i ← Tr[B⁻¹(Σ_x^i + μ_i μ_iᵀ)] / L, evaluated in the V basis.
    let mut gamma = DVector::zeros(problem.m());
    let mut mu_rot = Vec::with_capacity(post.active.len());
    for (col, &i) in post.active.iter().enumerate() {
        let mr = v.transpose() * post.x.row(i).transpose();
        let mut tr = 0.0;
        for s in 0..l {
            let w = post.b_vals[s];
            tr += (post.sigma_diag[col][s] + mr[s] * mr[s]) / w;
        }
        gamma[i] = (tr / l as f64).max(0.0);
        mu_rot.push(mr);
    }

    // B ← average over active indices of (Σ_x^i + μ_i μ_iᵀ) / γ_i, using the
    // freshly updated γ (a conditional maximization of the same Q function).
    let mut acc_diag = DVector::zeros(l);
    let mut acc_outer = DMatrix::zeros(l, l);
    let mut count = 0usize;
    for (col, &i) in post.active.iter().enumerate() {
        let g = gamma[i];
        if g <= 0.0 {
            continue;
        }
        acc_diag += &post.sigma_diag[col] / g;
        acc_outer.ger(1.0 / g, &mu_rot[col], &mu_rot[col], 1.0);
        count += 1;
    }
    if count == 0 {
        return Err(SblError::AllPruned);
    }
    let rotated = (acc_outer + DMatrix::from_diagonal(&acc_diag)) / count as f64;
    let mut b = v * rotated * v.transpose();
    linalg::symmetrize(&mut b);

    let lambda = match policy {
        LambdaPolicy::Fixed(val) => val,
        LambdaPolicy::Learned => {
            let resid_sq = (&problem.y - &problem.phi * &post.x).norm_squared();
            tsbl_lambda_rule(resid_sq, hyper.lambda, post.trace_term, n, l).max(LAMBDA_FLOOR)
        }
    };
    Ok(StepOutput {
        hyper: Hyperparams { gamma, b, lambda },
        post,
    })
}

/// One EM step at `hyper`: returns the updated hyperparameters and the
/// posterior moments they were computed from.
pub fn tsbl_em_step(
    problem: &MmvProblem,
    hyper: &Hyperparams,
    opts: &TsblOptions,
) -> Result<(Hyperparams, PosteriorMoments)> {
    opts.validate()?;
    hyper.validate()?;
    if !hyper.gamma.iter().any(|&g| g >= opts.prune_thresh) {
        return Err(SblError::AllPruned);
    }
    let out = em_update(problem, hyper, opts.lambda_policy)?;
    let moments = out.post.to_moments(problem.m());
    Ok((out.hyper, moments))
}

/// Runs T-SBL to convergence.
pub fn tsbl_solve(problem: &MmvProblem, opts: &TsblOptions) -> Result<SolverResult> {
    opts.validate()?;
    let (m, l) = (problem.m(), problem.l());
    let lambda0 = initial_lambda(problem, opts.lambda_policy);
    let mut hyper = Hyperparams::flat(m, l, opts.init_gamma, lambda0);
    let mut cost_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut peak = 0usize;

    while iterations < opts.max_iters {
        if hyper.gamma.iter().all(|&g| g == 0.0) {
            converged = true;
            break;
        }
        let out = em_update(problem, &hyper, opts.lambda_policy)?;
        iterations += 1;
        peak = peak.max(out.post.peak_elems);
        cost_trace.push(out.post.cost);

        let mut next = out.hyper;
        for g in next.gamma.iter_mut() {
            if *g < opts.prune_thresh {
                *g = 0.0;
            }
        }
        let delta = (&next.gamma - &hyper.gamma).amax();
        hyper = next;
        if delta < opts.gamma_tol {
            converged = true;
            break;
        }
    }

    let active = hyper.active_set();
    let x_hat = if active.is_empty() {
        DMatrix::zeros(m, l)
    } else {
        let post = SpectralPosterior::new(problem, &hyper)?;
        peak = peak.max(post.peak_elems);
        post.x
    };
    Ok(SolverResult {
        x_hat,
        hyper,
        active_set: active,
        cost_trace,
        iterations,
        converged,
        warnings: Vec::new(),
        peak_dense_elems: peak,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{cost, posterior_moments};

    fn small_problem() -> MmvProblem {
        let phi = DMatrix::from_row_slice(
            3,
            5,
            &[
                0.6, -0.2, 0.5, 0.9, -0.3, 0.8, 0.4, -0.5, 0.1, 0.7, 0.0, 0.89, 0.7, 0.42, 0.65,
            ],
        );
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 0.7, -0.4, 0.2, 0.3, 0.9]);
        MmvProblem::new(phi, y).unwrap()
    }

    fn some_hyper() -> Hyperparams {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.3]);
        Hyperparams::new(DVector::from_vec(vec![0.5, 0.0, 1.2, 0.3, 0.8]), b, 0.05).unwrap()
    }

    #[test]
    fn spectral_route_matches_cholesky_route() {
        let p = small_problem();
        let h = some_hyper();
        let spec = SpectralPosterior::new(&p, &h).unwrap().to_moments(p.m());
        let chol = posterior_moments(&p, &h).unwrap();
        assert!((&spec.mu_x - &chol.mu_x).amax() < 1e-12);
        for (a, b) in spec.sigma_blocks.iter().zip(&chol.sigma_blocks) {
            assert!((a - b).amax() < 1e-12);
        }
        let c = cost(&p, &h).unwrap();
        let cs = SpectralPosterior::new(&p, &h).unwrap().cost;
        assert!(((c - cs) / c).abs() < 1e-12);
    }

    #[test]
    fn lambda_rule_zero_residual_zero_prev() {
        assert_eq!(tsbl_lambda_rule(0.0, 0.0, 3.7, 4, 2), 0.0);
        assert!((tsbl_lambda_rule(8.0, 0.5, 4.0, 2, 2) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn zero_measurements_prune_everything() {
        let mut p = small_problem();
        p.y.fill(0.0);
        let r = tsbl_solve(&p, &TsblOptions::default()).unwrap();
        assert!(r.active_set.is_empty());
        assert!(r.x_hat.iter().all(|&v| v == 0.0));
        assert!(r.converged);
    }

    #[test]
    fn step_rejects_fully_pruned_input() {
        let p = small_problem();
        let h = Hyperparams::flat(5, 2, 0.0, 0.1);
        assert_eq!(
            tsbl_em_step(&p, &h, &TsblOptions::default()).unwrap_err(),
            SblError::AllPruned
        );
    }

    #[test]
    fn options_validation() {
        let bad = TsblOptions {
            prune_thresh: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TsblOptions {
            max_iters: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TsblOptions {
            lambda_policy: LambdaPolicy::Fixed(0.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
