//! Dense reference computations.
//!
//! Everything here materializes the full Kronecker block model (ML×ML
//! posterior covariance, NL×NL marginal covariance) with general-purpose
//! inverses. Only suitable for small instances; the solvers never call it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SblError};
use crate::linalg::{unvec_rows, vec_rows};
use crate::model::{build_block_dictionary, Hyperparams, MmvProblem};
use crate::tmsbl::BPolicy;
use crate::tsbl::LambdaPolicy;

fn inverse(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.try_inverse()
        .ok_or_else(|| SblError::InvalidHyperparams(format!("{what} is singular")))
}

fn require_all_positive(gamma: &DVector<f64>) -> Result<()> {
    if gamma.iter().all(|&g| g > 0.0) {
        Ok(())
    } else {
        Err(SblError::InvalidHyperparams(
            "precision form needs every gamma > 0".into(),
        ))
    }
}

/// `λI + DΣ0Dᵀ` built from the explicit block dictionary.
pub fn dense_sigma_y(problem: &MmvProblem, hyper: &Hyperparams) -> Result<DMatrix<f64>> {
    let d = build_block_dictionary(&problem.phi, problem.l())?;
    let s0 = hyper.prior_covariance();
    let nl = d.nrows();
    Ok(DMatrix::identity(nl, nl) * hyper.lambda + &d * s0 * d.transpose())
}

/// `(Σ0⁻¹ + DᵀD/λ)⁻¹`. Needs every `γ_i > 0`.
pub fn sigma_x_precision_form(problem: &MmvProblem, hyper: &Hyperparams) -> Result<DMatrix<f64>> {
    require_all_positive(&hyper.gamma)?;
    let d = build_block_dictionary(&problem.phi, problem.l())?;
    let s0_inv = inverse(hyper.prior_covariance(), "Σ0")?;
    inverse(
        s0_inv + d.transpose() * &d / hyper.lambda,
        "posterior precision",
    )
}

/// `Σ0 − Σ0Dᵀ(λI + DΣ0Dᵀ)⁻¹DΣ0`.
pub fn sigma_x_gain_form(problem: &MmvProblem, hyper: &Hyperparams) -> Result<DMatrix<f64>> {
    let d = build_block_dictionary(&problem.phi, problem.l())?;
    let s0 = hyper.prior_covariance();
    let sy_inv = inverse(dense_sigma_y(problem, hyper)?, "Σ_y")?;
    Ok(&s0 - &s0 * d.transpose() * sy_inv * &d * &s0)
}

/// `(λΣ0⁻¹ + DᵀD)⁻¹Dᵀy` as an M×L matrix. Needs every `γ_i > 0`.
pub fn map_precision_form(problem: &MmvProblem, hyper: &Hyperparams) -> Result<DMatrix<f64>> {
    require_all_positive(&hyper.gamma)?;
    let d = build_block_dictionary(&problem.phi, problem.l())?;
    let s0_inv = inverse(hyper.prior_covariance(), "Σ0")?;
    let lhs = inverse(s0_inv * hyper.lambda + d.transpose() * &d, "λΣ0⁻¹ + DᵀD")?;
    let x = lhs * d.transpose() * vec_rows(&problem.y);
    Ok(unvec_rows(&x, problem.m(), problem.l()))
}

/// `Σ0Dᵀ(λI + DΣ0Dᵀ)⁻¹y` as an M×L matrix.
pub fn map_gain_form(problem: &MmvProblem, hyper: &Hyperparams) -> Result<DMatrix<f64>> {
    let d = build_block_dictionary(&problem.phi, problem.l())?;
    let sy_inv = inverse(dense_sigma_y(problem, hyper)?, "Σ_y")?;
    let x = hyper.prior_covariance() * d.transpose() * sy_inv * vec_rows(&problem.y);
    Ok(unvec_rows(&x, problem.m(), problem.l()))
}

/// `yᵀΣ_y⁻¹y + ln|Σ_y|` via explicit inverse and LU determinant.
pub fn dense_cost(problem: &MmvProblem, hyper: &Hyperparams) -> Result<f64> {
    let sy = dense_sigma_y(problem, hyper)?;
    let det = sy.clone().lu().determinant();
    if !(det > 0.0) {
        return Err(SblError::NotPositiveDefinite("Σ_y"));
    }
    let y = vec_rows(&problem.y);
    let sy_inv = inverse(sy, "Σ_y")?;
    Ok(y.dot(&(sy_inv * &y)) + det.ln())
}

fn diag_block(m: &DMatrix<f64>, i: usize, l: usize) -> DMatrix<f64> {
    m.view((i * l, i * l), (l, l)).into_owned()
}

/// One T-SBL EM step with the full posterior covariance: γ from the old B,
/// then B averaged over active rows with the new γ, then λ.
pub fn tsbl_step(
    problem: &MmvProblem,
    hyper: &Hyperparams,
    policy: LambdaPolicy,
) -> Result<Hyperparams> {
    let (n, m, l) = (problem.n(), problem.m(), problem.l());
    let sigma = sigma_x_gain_form(problem, hyper)?;
    let mu = map_gain_form(problem, hyper)?;
    let b_inv = inverse(hyper.b.clone(), "B")?;

    let mut second = Vec::with_capacity(m);
    let mut gamma = DVector::zeros(m);
    for i in 0..m {
        if hyper.gamma[i] <= 0.0 {
            second.push(None);
            continue;
        }
        let mi = mu.row(i).transpose();
        let s = diag_block(&sigma, i, l) + &mi * mi.transpose();
        gamma[i] = (&b_inv * &s).trace() / l as f64;
        second.push(Some(s));
    }

    let mut b = DMatrix::zeros(l, l);
    let mut count = 0;
    for i in 0..m {
        if let Some(s) = &second[i] {
            if gamma[i] > 0.0 {
                b += s / gamma[i];
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(SblError::AllPruned);
    }
    b /= count as f64;
    b = (&b + b.transpose()) * 0.5;

    let lambda = match policy {
        LambdaPolicy::Fixed(v) => v,
        LambdaPolicy::Learned => {
            let d = build_block_dictionary(&problem.phi, l)?;
            let resid = (vec_rows(&problem.y) - &d * vec_rows(&mu)).norm_squared();
            // Tr(Σ_x DᵀD) / λ equals ML − Tr(Σ_x Σ0⁻¹) on the active set.
            let trace = (&sigma * d.transpose() * &d).trace() / hyper.lambda;
            (resid + hyper.lambda * trace) / (n * l) as f64
        }
    };
    Ok(Hyperparams { gamma, b, lambda })
}

/// `Ξ_x = Γ − ΓΦᵀ(λI + ΦΓΦᵀ)⁻¹ΦΓ` and `X = ΓΦᵀ(λI + ΦΓΦᵀ)⁻¹Y`, full matrices.
pub fn reduced_moments_dense(
    problem: &MmvProblem,
    gamma: &DVector<f64>,
    lambda: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = problem.n();
    let g = DMatrix::from_diagonal(gamma);
    let s = DMatrix::identity(n, n) * lambda + &problem.phi * &g * problem.phi.transpose();
    let s_inv = inverse(s, "λI + ΦΓΦᵀ")?;
    let gain = &g * problem.phi.transpose() * s_inv;
    let xi = &g - &gain * &problem.phi * &g;
    let x = gain * &problem.y;
    Ok((x, xi))
}

/// `(N·resid + λ Tr[A(λI + A)⁻¹]) / N` with `A = ΦΓΦᵀ`, or its diagonal.
fn reduced_lambda(
    problem: &MmvProblem,
    x: &DMatrix<f64>,
    gamma: &DVector<f64>,
    lambda: f64,
    diag_only: bool,
) -> Result<f64> {
    let (n, l) = (problem.n(), problem.l());
    let mut a = &problem.phi * DMatrix::from_diagonal(gamma) * problem.phi.transpose();
    if diag_only {
        a = DMatrix::from_diagonal(&a.diagonal());
    }
    let inv = inverse(DMatrix::identity(n, n) * lambda + &a, "λI + A")?;
    let resid = (&problem.y - &problem.phi * x).norm_squared() / (n * l) as f64;
    Ok(resid + lambda / n as f64 * (a * inv).trace())
}

/// Output of one reduced-space step.
#[derive(Debug, Clone)]
pub struct ReducedStep {
    pub gamma: DVector<f64>,
    pub b: DMatrix<f64>,
    pub lambda: f64,
    pub x: DMatrix<f64>,
}

/// One T-MSBL step (no pruning) with full `Ξ_x`:
/// `B̃ = Σ X_iᵀX_i/γ_i + ηI`, `B = B̃/‖B̃‖_F`, `γ_i = X_i B⁻¹ X_iᵀ/L + Ξ_ii`.
pub fn tmsbl_step(
    problem: &MmvProblem,
    gamma: &DVector<f64>,
    lambda: f64,
    b_policy: BPolicy,
    lambda_policy: LambdaPolicy,
    low_snr_mod: bool,
) -> Result<ReducedStep> {
    let (m, l) = (problem.m(), problem.l());
    let (x, xi) = reduced_moments_dense(problem, gamma, lambda)?;
    let b = match b_policy {
        BPolicy::PinnedIdentity => DMatrix::identity(l, l),
        BPolicy::Plain | BPolicy::Regularized { .. } => {
            let eta = if let BPolicy::Regularized { eta } = b_policy {
                eta
            } else {
                0.0
            };
            let mut bt = DMatrix::identity(l, l) * eta;
            for i in 0..m {
                if gamma[i] > 0.0 {
                    bt += x.row(i).transpose() * x.row(i) / gamma[i];
                }
            }
            let f = bt.norm();
            bt / f
        }
    };
    let b_inv = inverse(b.clone(), "B")?;
    let new_gamma = DVector::from_fn(m, |i, _| {
        let r = x.row(i);
        let mut q = 0.0;
        for s in 0..l {
            for t in 0..l {
                q += r[s] * b_inv[(s, t)] * r[t];
            }
        }
        q / l as f64 + xi[(i, i)]
    });
    let lambda = match lambda_policy {
        LambdaPolicy::Fixed(v) => v,
        LambdaPolicy::Learned => reduced_lambda(problem, &x, gamma, lambda, low_snr_mod)?,
    };
    Ok(ReducedStep {
        gamma: new_gamma,
        b,
        lambda,
        x,
    })
}

/// One MSBL step (no pruning): `γ_i = ‖X_i‖²/L + Ξ_ii`.
pub fn msbl_step(
    problem: &MmvProblem,
    gamma: &DVector<f64>,
    lambda: f64,
    lambda_policy: LambdaPolicy,
) -> Result<ReducedStep> {
    let l = problem.l();
    let (x, xi) = reduced_moments_dense(problem, gamma, lambda)?;
    let new_gamma = DVector::from_fn(problem.m(), |i, _| {
        x.row(i).norm_squared() / l as f64 + xi[(i, i)]
    });
    let lambda = match lambda_policy {
        LambdaPolicy::Fixed(v) => v,
        LambdaPolicy::Learned => reduced_lambda(problem, &x, gamma, lambda, false)?,
    };
    Ok(ReducedStep {
        gamma: new_gamma,
        b: DMatrix::identity(l, l),
        lambda,
        x,
    })
}

/// Relative error of the Kronecker inverse approximation from the spectra
/// alone: with `A = ΦΓΦᵀ = U diag(a) Uᵀ` and `B = V diag(ω) Vᵀ`, both sides
/// share the eigenbasis `U⊗V`, with eigenvalues `1/(λ + a_n ω_s)` and
/// `1/((λ + a_n) ω_s)`.
pub fn approx_error_spectral(
    phi: &DMatrix<f64>,
    gamma: &DVector<f64>,
    b: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    let a = phi * DMatrix::from_diagonal(gamma) * phi.transpose();
    let (av, _) = crate::linalg::psd_eigen(&a).expect("ΦΓΦᵀ is PSD");
    let (bv, _) = crate::linalg::psd_eigen(b).expect("B is PSD");
    let (mut num, mut den) = (0.0, 0.0);
    for &an in av.iter() {
        for &w in bv.iter() {
            let exact = 1.0 / (lambda + an * w);
            let approx = 1.0 / ((lambda + an) * w);
            num += (exact - approx).powi(2);
            den += exact * exact;
        }
    }
    (num / den).sqrt()
}

/// Explicit Kronecker product, for cross-checking [`crate::linalg::kron`].
pub fn kron_naive(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            for k in 0..br {
                for m in 0..bc {
                    out[(i * br + k, j * bc + m)] = a[(i, j)] * b[(k, m)];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::kron;

    #[test]
    fn naive_kron_matches_library() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, -0.3, 0.4]);
        assert_eq!(kron_naive(&a, &b), kron(&a, &b));
    }

    #[test]
    fn spectral_error_vanishes_on_exact_cases() {
        let phi = DMatrix::from_row_slice(2, 3, &[1.0, 0.3, -0.2, 0.1, 0.9, 0.4]);
        let g = DVector::from_vec(vec![1.0, 0.5, 2.0]);
        assert!(approx_error_spectral(&phi, &g, &DMatrix::identity(3, 3), 0.5) < 1e-15);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]);
        assert!(approx_error_spectral(&phi, &g, &b, 0.0) < 1e-15);
        assert!(approx_error_spectral(&phi, &g, &b, 1.0) > 1e-3);
    }
}
