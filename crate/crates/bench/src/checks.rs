//! Algebraic and numerical self-checks run by `verify` and the acceptance
//! suite. Each check draws its own seeded instances.

use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tsbl_core::datagen::{
    generate_problem, sample_dictionary, DictionaryKind, ProblemSpec, Rescale, SourceModel,
    TrialSeed,
};
use tsbl_core::metrics::{approx_error, cost_gradient_fd, lemma3_gamma};
use tsbl_core::{
    map_estimate, oracle, posterior_moments, tsbl_em_step, tsbl_solve, BPolicy, Hyperparams,
    LambdaPolicy, MmvProblem, MsblState, TmsblOptions, TmsblState, TsblOptions,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "{tag} {}: {} ({:.2}s)",
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

fn timed(
    name: &'static str,
    limit: Duration,
    body: impl FnOnce() -> Result<(bool, String), String>,
) -> CheckOutcome {
    let start = Instant::now();
    let res = body();
    let elapsed = start.elapsed();
    let (passed, detail) = match res {
        Ok((_, d)) if elapsed > limit => (false, format!("{d}; exceeded {}s", limit.as_secs())),
        Ok((ok, d)) => (ok, d),
        Err(e) => (false, format!("error: {e}")),
    };
    CheckOutcome {
        name,
        passed,
        detail,
        elapsed,
    }
}

fn gaussian(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

/// Random SPD matrix scaled to unit Frobenius norm.
fn random_spd(r: &mut ChaCha8Rng, l: usize) -> DMatrix<f64> {
    let g = gaussian(r, l, l);
    let b = &g * g.transpose() + DMatrix::identity(l, l) * 0.5;
    let f = b.norm();
    b / f
}

/// Small dense instance: N ≤ 6, M ≤ 12, L ≤ 4, positive γ, SPD B.
fn random_instance(seed: u64) -> (MmvProblem, Hyperparams) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = r.gen_range(2..=6);
    let m = r.gen_range(n..=12);
    let l = r.gen_range(1..=4);
    let phi = gaussian(&mut r, n, m) / (n as f64).sqrt();
    let y = gaussian(&mut r, n, l);
    let gamma = DVector::from_fn(m, |_, _| r.gen_range(0.2..2.0));
    let b = random_spd(&mut r, l);
    let lambda = r.gen_range(0.05..1.0);
    let problem = MmvProblem::new(phi, y).expect("valid shapes");
    let hyper = Hyperparams::new(gamma, b, lambda).expect("valid hyperparameters");
    (problem, hyper)
}

fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(f64::MIN_POSITIVE)
}

fn err(e: impl fmt::Display) -> String {
    e.to_string()
}

/// Posterior covariance and mean computed in precision and gain form agree,
/// and the Kronecker inverse approximation is exact exactly when it should be.
pub fn dual_forms_and_approximation() -> CheckOutcome {
    timed(
        "dual forms and kronecker approximation",
        Duration::from_secs(10),
        || {
            let mut worst_form = 0.0f64;
            for seed in 0..100 {
                let (p, h) = random_instance(seed);
                let s1 = oracle::sigma_x_precision_form(&p, &h).map_err(err)?;
                let s2 = oracle::sigma_x_gain_form(&p, &h).map_err(err)?;
                let m1 = oracle::map_precision_form(&p, &h).map_err(err)?;
                let m2 = oracle::map_gain_form(&p, &h).map_err(err)?;
                let lib = map_estimate(&p, &h).map_err(err)?;
                worst_form = worst_form
                    .max(rel_diff(&s1, &s2))
                    .max(rel_diff(&m1, &m2))
                    .max(rel_diff(&m2, &lib));
            }
            let (mut worst_exact, mut least_generic) = (0.0f64, f64::INFINITY);
            for seed in 1000..1020 {
                let (p, h) = random_instance(seed);
                let l = p.l().max(2);
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                let b = random_spd(&mut r, l);
                let at_identity =
                    approx_error(&p.phi, &h.gamma, &DMatrix::identity(l, l), 1.0).map_err(err)?;
                let at_zero_noise = approx_error(&p.phi, &h.gamma, &b, 0.0).map_err(err)?;
                worst_exact = worst_exact.max(at_identity).max(at_zero_noise);
                least_generic =
                    least_generic.min(approx_error(&p.phi, &h.gamma, &b, 1.0).map_err(err)?);
            }
            let ok = worst_form < 1e-10 && worst_exact < 1e-10 && least_generic > 1e-6;
            Ok((
            ok,
            format!("max form rel diff {worst_form:.2e}, max exact-case error {worst_exact:.2e}, min generic error {least_generic:.2e}"),
        ))
        },
    )
}

/// The library's blockwise posterior moments match a dense evaluation.
pub fn moments_match_dense() -> CheckOutcome {
    timed(
        "posterior moments vs dense",
        Duration::from_secs(10),
        || {
            let mut worst = 0.0f64;
            for seed in 200..300 {
                let (p, h) = random_instance(seed);
                let dense = oracle::sigma_x_gain_form(&p, &h).map_err(err)?;
                let lib = posterior_moments(&p, &h).map_err(err)?;
                let l = p.l();
                for i in 0..p.m() {
                    let block = dense.view((i * l, i * l), (l, l)).into_owned();
                    worst = worst.max(rel_diff(&block, &lib.sigma_blocks[i]));
                }
            }
            Ok((worst < 1e-9, format!("max block rel diff {worst:.2e}")))
        },
    )
}

fn noisy_spec(n: usize, m: usize, l: usize, k: usize, beta: f64, snr_db: f64) -> ProblemSpec {
    ProblemSpec {
        n,
        m,
        l,
        k,
        dictionary: DictionaryKind::UnitHypersphere,
        source: SourceModel::common_ar1(beta, Rescale::UnitNorm),
        snr_db,
    }
}

/// The block EM solver never increases its cost with learned noise and
/// pruning disabled.
pub fn em_monotone() -> CheckOutcome {
    timed("EM cost monotone", Duration::from_secs(60), || {
        let opts = TsblOptions {
            max_iters: 300,
            prune_thresh: f64::MIN_POSITIVE,
            ..TsblOptions::default()
        };
        let mut worst = f64::NEG_INFINITY;
        let mut steps = 0usize;
        for trial in 0..50 {
            let mut r = ChaCha8Rng::seed_from_u64(trial);
            let (n, l) = (r.gen_range(4..=10), r.gen_range(1..=4));
            let m = r.gen_range(n + 1..=3 * n);
            let k = r.gen_range(1..=n / 2);
            let snr = r.gen_range(5.0..30.0);
            let beta = r.gen_range(-0.9..0.95);
            let p = generate_problem(
                &noisy_spec(n, m, l, k, beta, snr),
                &TrialSeed::new(77, 0, trial),
            )
            .map_err(err)?;
            let res = tsbl_solve(&p, &opts).map_err(err)?;
            for w in res.cost_trace.windows(2) {
                worst = worst.max((w[1] - w[0]) / w[0].abs().max(1.0));
                steps += 1;
            }
        }
        Ok((
            worst <= 1e-8,
            format!("{steps} steps, max relative increase {worst:.2e}"),
        ))
    })
}

/// T-MSBL with `B` pinned to the identity follows the MSBL trajectory.
pub fn pinned_matches_baseline() -> CheckOutcome {
    timed("pinned-B T-MSBL vs MSBL", Duration::from_secs(30), || {
        let topts = TmsblOptions {
            b_policy: BPolicy::PinnedIdentity,
            lambda_policy: LambdaPolicy::Learned,
            low_snr_lambda_mod: false,
            b_identity_switch: false,
            ..TmsblOptions::default()
        };
        let mopts = TsblOptions::default();
        let mut worst = 0.0f64;
        let mut steps = 0usize;
        for trial in 0..20 {
            let beta = -0.9 + 0.09 * trial as f64;
            let p = generate_problem(
                &noisy_spec(12, 36, 3, 5, beta, 20.0),
                &TrialSeed::new(78, 0, trial),
            )
            .map_err(err)?;
            let mut a = TmsblState::new(&p, &topts).map_err(err)?;
            let mut b = MsblState::new(&p, &mopts).map_err(err)?;
            for _ in 0..200 {
                if a.is_converged() || b.is_converged() {
                    break;
                }
                a.step().map_err(err)?;
                b.step().map_err(err)?;
                worst = worst
                    .max((a.gamma() - b.gamma()).amax())
                    .max((a.x() - b.x()).amax());
                steps += 1;
            }
        }
        Ok((
            worst <= 1e-10,
            format!("{steps} iterations compared, max abs diff {worst:.2e}"),
        ))
    })
}

/// At the closed-form γ for a K = N support the cost gradient vanishes as
/// λ → 0. At λ = 1e-9 it is O(λ) and grows with the conditioning of the
/// support columns.
pub fn closed_form_gamma_stationary() -> CheckOutcome {
    timed(
        "closed-form gamma is stationary",
        Duration::from_secs(30),
        || {
            let mut worst = 0.0f64;
            for seed in 0..20u64 {
                let mut r = ChaCha8Rng::seed_from_u64(500 + seed);
                let n = r.gen_range(3..=6);
                let m = r.gen_range(n + 2..=12);
                let l = r.gen_range(2..=4);
                let phi = sample_dictionary(n, m, DictionaryKind::UnitHypersphere, &mut r)
                    .map_err(err)?;
                let mut idx: Vec<usize> = (0..m).collect();
                for i in 0..n {
                    let j = r.gen_range(i..m);
                    idx.swap(i, j);
                }
                let mut support = idx[..n].to_vec();
                support.sort_unstable();
                let b = random_spd(&mut r, l);
                let mut x = DMatrix::zeros(m, l);
                for &i in &support {
                    x.set_row(i, &gaussian(&mut r, 1, l).row(0));
                }
                let y = &phi * &x;
                let g = lemma3_gamma(&phi, &y, &support, &b).map_err(err)?;
                let mut gamma = DVector::zeros(m);
                for (c, &i) in support.iter().enumerate() {
                    gamma[i] = g[c];
                }
                let p = MmvProblem::new(phi, y).map_err(err)?;
                let h = Hyperparams::new(gamma, b, 1e-9).map_err(err)?;
                let grad = cost_gradient_fd(&p, &h, &support).map_err(err)?;
                worst = grad.iter().fold(worst, |a, v| a.max(v.abs()));
            }
            Ok((worst < 1e-4, format!("max |gradient| {worst:.2e}")))
        },
    )
}

/// One library EM step of each solver against the dense reference step.
pub fn steps_match_dense() -> CheckOutcome {
    timed(
        "solver steps vs dense reference",
        Duration::from_secs(10),
        || {
            let mut worst = 0.0f64;
            for seed in 300..330 {
                let (p, h) = random_instance(seed);
                for policy in [LambdaPolicy::Learned, LambdaPolicy::Fixed(h.lambda)] {
                    let opts = TsblOptions {
                        lambda_policy: policy,
                        ..TsblOptions::default()
                    };
                    let (lib, _) = tsbl_em_step(&p, &h, &opts).map_err(err)?;
                    let dense = oracle::tsbl_step(&p, &h, policy).map_err(err)?;
                    let dg = (&lib.gamma - &dense.gamma).norm()
                        / dense.gamma.norm().max(f64::MIN_POSITIVE);
                    worst = worst.max(dg).max(rel_diff(&lib.b, &dense.b));
                    worst = worst.max((lib.lambda - dense.lambda).abs() / dense.lambda);
                }
            }
            Ok((worst < 1e-8, format!("max rel diff {worst:.2e}")))
        },
    )
}

/// Every check, in a fixed order.
pub fn verify_suite() -> Vec<CheckOutcome> {
    vec![
        dual_forms_and_approximation(),
        moments_match_dense(),
        steps_match_dense(),
        em_monotone(),
        pinned_matches_baseline(),
        closed_form_gamma_stationary(),
    ]
}
