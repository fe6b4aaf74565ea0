mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tsbl_core::datagen::{
    generate_problem, DictionaryKind, ProblemSpec, Rescale, SourceModel, TrialSeed,
};
use tsbl_core::linalg::{is_symmetric, min_eigenvalue, vec_rows};
use tsbl_core::metrics::lemma3_gamma;
use tsbl_core::{
    build_block_dictionary, cost, map_estimate, tmsbl_gamma_update, tsbl_em_step, Hyperparams,
    TsblOptions,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cost_invariant_to_gamma_b_rescaling(seed in any::<u64>(), c in 0.01f64..100.0) {
        let inst = random_instance(seed);
        let scaled = Hyperparams {
            gamma: &inst.hyper.gamma * c,
            b: &inst.hyper.b / c,
            lambda: inst.hyper.lambda,
        };
        let a = cost(&inst.problem, &inst.hyper).unwrap();
        let b = cost(&inst.problem, &scaled).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn block_residual_equals_matrix_residual(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let p = &inst.problem;
        let mut r = rng(seed ^ 1);
        let x = gaussian(&mut r, p.m(), p.l());
        let d = build_block_dictionary(&p.phi, p.l()).unwrap();
        let lhs = (vec_rows(&p.y) - d * vec_rows(&x)).norm();
        let rhs = (&p.y - &p.phi * &x).norm();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
    }

    #[test]
    fn em_step_keeps_hyperparameters_valid(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let (next, _) = tsbl_em_step(&inst.problem, &inst.hyper, &TsblOptions::default()).unwrap();
        prop_assert!(next.gamma.iter().all(|&g| g >= 0.0 && g.is_finite()));
        prop_assert!(next.lambda > 0.0);
        prop_assert!(is_symmetric(&next.b, 1e-12));
        prop_assert!(min_eigenvalue(&next.b) > 0.0);
    }

    #[test]
    fn tmsbl_gamma_rule_is_nonnegative(seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = gaussian(&mut r, 6, 3);
        let b = random_spd(&mut r, 3);
        let xi = DVector::from_fn(6, |i, _| i as f64 * 0.1);
        let g = tmsbl_gamma_update(&x, &xi, &b.try_inverse().unwrap());
        prop_assert!(g.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn zeroed_gamma_gives_zero_row(seed in any::<u64>(), pick in 0usize..12) {
        let mut inst = random_instance(seed);
        let i = pick % inst.problem.m();
        inst.hyper.gamma[i] = 0.0;
        let x = map_estimate(&inst.problem, &inst.hyper).unwrap();
        prop_assert!(x.row(i).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn closed_form_gamma_with_identity_b_is_row_energy(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (n, m, l) = (4, 9, 3);
        let phi = gaussian(&mut r, n, m);
        let support = vec![0, 2, 5, 7];
        let mut x = DMatrix::zeros(m, l);
        for &i in &support {
            x.set_row(i, &gaussian(&mut r, 1, l).row(0));
        }
        let y = &phi * &x;
        let g = lemma3_gamma(&phi, &y, &support, &DMatrix::identity(l, l)).unwrap();
        for (c, &i) in support.iter().enumerate() {
            let expect = x.row(i).norm_squared() / l as f64;
            prop_assert!((g[c] - expect).abs() <= 1e-8 * expect.max(1.0));
        }
    }

    #[test]
    fn generation_is_deterministic(master in any::<u64>(), trial in 0u64..1000, beta in -0.99f64..0.99) {
        let spec = ProblemSpec {
            n: 6,
            m: 12,
            l: 3,
            k: 3,
            dictionary: DictionaryKind::UnitHypersphere,
            source: SourceModel::common_ar1(beta, Rescale::UnitNorm),
            snr_db: 20.0,
        };
        let seed = TrialSeed::new(master, 2, trial);
        prop_assert_eq!(generate_problem(&spec, &seed).unwrap(), generate_problem(&spec, &seed).unwrap());
    }
}
