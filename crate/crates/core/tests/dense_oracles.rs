mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use tsbl_core::linalg::unvec_rows;
use tsbl_core::metrics::approx_error;
use tsbl_core::oracle;
use tsbl_core::tsbl::LambdaPolicy;
use tsbl_core::{
    cost, map_estimate, msbl_em_step, posterior_moments, tsbl_em_step, BPolicy, Hyperparams,
    TmsblOptions, TmsblState, TsblOptions,
};

#[test]
fn covariance_forms_agree_with_each_other_and_library() {
    for seed in 0..100 {
        let inst = random_instance(seed);
        let (p, h) = (&inst.problem, &inst.hyper);
        let first = oracle::sigma_x_precision_form(p, h).unwrap();
        let second = oracle::sigma_x_gain_form(p, h).unwrap();
        assert!(rel_diff(&first, &second) < 1e-10, "seed {seed}");

        let lib = posterior_moments(p, h).unwrap();
        let l = p.l();
        for i in 0..p.m() {
            let block = second.view((i * l, i * l), (l, l)).into_owned();
            assert!(
                rel_diff(&block, &lib.sigma_blocks[i]) < 1e-9,
                "seed {seed} block {i}"
            );
        }
    }
}

#[test]
fn map_forms_agree_with_each_other_and_library() {
    for seed in 100..200 {
        let inst = random_instance(seed);
        let (p, h) = (&inst.problem, &inst.hyper);
        let first = oracle::map_precision_form(p, h).unwrap();
        let second = oracle::map_gain_form(p, h).unwrap();
        assert!(rel_diff(&first, &second) < 1e-10, "seed {seed}");
        let lib = map_estimate(p, h).unwrap();
        assert!(rel_diff(&second, &lib) < 1e-10, "seed {seed}");
        let mean = posterior_moments(p, h).unwrap().mean_matrix();
        assert!(rel_diff(&lib, &mean) < 1e-12);
    }
}

#[test]
fn pruned_rows_have_zero_moments() {
    let mut inst = random_instance(7);
    inst.hyper.gamma[0] = 0.0;
    let x = map_estimate(&inst.problem, &inst.hyper).unwrap();
    assert!(x.row(0).iter().all(|&v| v == 0.0));
    let dense = oracle::map_gain_form(&inst.problem, &inst.hyper).unwrap();
    assert!(rel_diff(&dense, &x) < 1e-10);
    let pm = posterior_moments(&inst.problem, &inst.hyper).unwrap();
    assert!(pm.sigma_blocks[0].iter().all(|&v| v == 0.0));
}

#[test]
fn cost_matches_dense_evaluation() {
    for seed in 200..250 {
        let inst = random_instance(seed);
        let a = cost(&inst.problem, &inst.hyper).unwrap();
        let b = oracle::dense_cost(&inst.problem, &inst.hyper).unwrap();
        assert!(
            (a - b).abs() / b.abs().max(1.0) < 1e-10,
            "seed {seed}: {a} vs {b}"
        );
    }
}

#[test]
fn tsbl_step_matches_full_covariance_oracle() {
    for seed in 300..330 {
        let inst = random_instance(seed);
        for policy in [
            LambdaPolicy::Learned,
            LambdaPolicy::Fixed(inst.hyper.lambda),
        ] {
            let opts = TsblOptions {
                lambda_policy: policy,
                ..TsblOptions::default()
            };
            let (next, _) = tsbl_em_step(&inst.problem, &inst.hyper, &opts).unwrap();
            let dense = oracle::tsbl_step(&inst.problem, &inst.hyper, policy).unwrap();
            assert!(
                vec_rel_diff(&next.gamma, &dense.gamma) < 1e-10,
                "seed {seed}"
            );
            assert!(rel_diff(&next.b, &dense.b) < 1e-10, "seed {seed}");
            assert!(
                (next.lambda - dense.lambda).abs() / dense.lambda < 1e-10,
                "seed {seed}"
            );
        }
    }
}

#[test]
fn tsbl_step_moments_match_oracle() {
    let inst = random_instance(42);
    let (_, moments) = tsbl_em_step(&inst.problem, &inst.hyper, &TsblOptions::default()).unwrap();
    let dense = oracle::map_gain_form(&inst.problem, &inst.hyper).unwrap();
    let mu = unvec_rows(&moments.mu_x, inst.problem.m(), inst.problem.l());
    assert!(rel_diff(&dense, &mu) < 1e-10);
}

fn tmsbl_opts(b_policy: BPolicy, low_snr: bool) -> TmsblOptions {
    TmsblOptions {
        b_policy,
        lambda_policy: LambdaPolicy::Learned,
        low_snr_lambda_mod: low_snr,
        b_identity_switch: false,
        prune_thresh: f64::MIN_POSITIVE,
        ..TmsblOptions::default()
    }
}

#[test]
fn tmsbl_steps_match_dense_oracle() {
    for seed in 400..420 {
        let mut r = rng(seed);
        // M ≥ L active rows keeps the plain B estimate invertible.
        let inst = sized_instance(&mut r, 5, 10, 3);
        for (policy, low_snr) in [
            (BPolicy::Plain, false),
            (BPolicy::Regularized { eta: 2.0 }, true),
            (BPolicy::PinnedIdentity, false),
        ] {
            let opts = tmsbl_opts(policy, low_snr);
            let mut state = TmsblState::new(&inst.problem, &opts).unwrap();
            for it in 0..4 {
                let (g0, l0) = (state.gamma().clone(), state.lambda());
                let dense = oracle::tmsbl_step(
                    &inst.problem,
                    &g0,
                    l0,
                    policy,
                    LambdaPolicy::Learned,
                    low_snr,
                )
                .unwrap();
                state.step().unwrap();
                let ctx = format!("seed {seed} {policy:?} iter {it}");
                assert!(vec_rel_diff(state.gamma(), &dense.gamma) < 1e-10, "{ctx}");
                assert!(rel_diff(state.x(), &dense.x) < 1e-10, "{ctx}");
                assert!(rel_diff(state.b(), &dense.b) < 1e-10, "{ctx}");
                assert!(
                    (state.lambda() - dense.lambda).abs() / dense.lambda < 1e-10,
                    "{ctx}"
                );
            }
        }
    }
}

#[test]
fn msbl_step_matches_dense_oracle() {
    for seed in 500..520 {
        let inst = random_instance(seed);
        let (g, x, xi) = msbl_em_step(
            &inst.problem,
            &inst.hyper.gamma,
            0.3,
            &TsblOptions::default(),
        )
        .unwrap();
        let dense = oracle::msbl_step(
            &inst.problem,
            &inst.hyper.gamma,
            0.3,
            LambdaPolicy::Fixed(0.3),
        )
        .unwrap();
        assert!(vec_rel_diff(&g, &dense.gamma) < 1e-10);
        assert!(rel_diff(&x, &dense.x) < 1e-10);
        let (_, xi_full) =
            oracle::reduced_moments_dense(&inst.problem, &inst.hyper.gamma, 0.3).unwrap();
        assert!(vec_rel_diff(&xi, &xi_full.diagonal()) < 1e-10);
    }
}

#[test]
fn kronecker_approximation_error() {
    for seed in 600..620 {
        let inst = random_instance(seed);
        let (phi, g) = (&inst.problem.phi, &inst.hyper.gamma);
        let l = inst.problem.l().max(2);
        let mut r = rng(seed);
        let b = random_spd(&mut r, l);
        assert!(approx_error(phi, g, &DMatrix::identity(l, l), 0.5).unwrap() < 1e-10);
        // λ = 0 needs ΦΓΦᵀ invertible: true for M ≥ N with Gaussian Φ.
        assert!(approx_error(phi, g, &b, 0.0).unwrap() < 1e-10);
        let e = approx_error(phi, g, &b, 1.0).unwrap();
        assert!(e > 1e-6, "seed {seed}: {e}");
        let spectral = oracle::approx_error_spectral(phi, g, &b, 1.0);
        assert!((e - spectral).abs() < 1e-10 * spectral.max(1.0));
    }
}

#[test]
fn approx_error_is_permutation_invariant() {
    let inst = random_instance(9);
    let (phi, g) = (&inst.problem.phi, &inst.hyper.gamma);
    let m = phi.ncols();
    let perm: Vec<usize> = (0..m).rev().collect();
    let phi_p = phi.select_columns(perm.iter());
    let g_p = DVector::from_fn(m, |i, _| g[perm[i]]);
    let mut r = rng(9);
    let b = random_spd(&mut r, 3);
    let a = approx_error(phi, g, &b, 0.7).unwrap();
    let c = approx_error(&phi_p, &g_p, &b, 0.7).unwrap();
    assert!((a - c).abs() < 1e-12);
}

#[test]
fn hyperparams_flat_is_valid() {
    assert!(Hyperparams::flat(4, 3, 1.0, 0.1).validate().is_ok());
}
