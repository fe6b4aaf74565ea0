//! Browser bindings. Each export takes plain numbers and returns a JSON
//! string for the page script to draw.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use tsbl_core::datagen::{
    gen_sources, generate_problem, sample_dictionary, sample_extreme_beta, DictionaryKind,
    ProblemSpec, Rescale, SourceKind, SourceModel, Stream, TrialSeed,
};
use tsbl_core::metrics::{approx_error, is_failure, mse, source_condition_number, FailureRule};
use tsbl_core::{msbl_solve, tmsbl_solve, Regime, TmsblOptions, TsblOptions};
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Estimate {
    pub algorithm: &'static str,
    pub row_norms: Vec<f64>,
    pub failed: bool,
    pub mse: f64,
    pub iterations: usize,
}

#[derive(Debug, Serialize)]
pub struct Recovery {
    pub support: Vec<usize>,
    pub true_row_norms: Vec<f64>,
    pub estimates: Vec<Estimate>,
}

fn row_norms(x: &DMatrix<f64>) -> Vec<f64> {
    x.row_iter().map(|r| r.norm()).collect()
}

/// Draws one problem and solves it with T-MSBL and MSBL. A non-finite
/// `snr_db` means noiseless.
pub fn recover(
    n: usize,
    m: usize,
    l: usize,
    k: usize,
    beta: f64,
    snr_db: f64,
    seed: u64,
) -> Result<Recovery, String> {
    let snr_db = if snr_db.is_finite() {
        snr_db
    } else {
        f64::INFINITY
    };
    let rescale = if snr_db.is_infinite() {
        Rescale::NoiselessUniform
    } else {
        Rescale::UnitNorm
    };
    let spec = ProblemSpec {
        n,
        m,
        l,
        k,
        dictionary: DictionaryKind::UnitHypersphere,
        source: SourceModel::common_ar1(beta, rescale),
        snr_db,
    };
    let problem =
        generate_problem(&spec, &TrialSeed::new(seed, 0, 0)).map_err(|e| e.to_string())?;
    let truth = problem
        .truth
        .as_ref()
        .expect("generated problems carry truth");
    let regime = Regime::from_snr_db(snr_db);
    let tm_opts = TmsblOptions::preset(regime);
    let ms_opts = TsblOptions {
        lambda_policy: tm_opts.lambda_policy,
        ..TsblOptions::default()
    };
    let rule = FailureRule::for_snr(snr_db);
    let tm = tmsbl_solve(&problem, &tm_opts).map_err(|e| e.to_string())?;
    let ms = msbl_solve(&problem, &ms_opts).map_err(|e| e.to_string())?;
    let estimates = [("T-MSBL", tm), ("MSBL", ms)]
        .into_iter()
        .map(|(name, r)| {
            Ok(Estimate {
                algorithm: name,
                row_norms: row_norms(&r.x_hat),
                failed: is_failure(&r.x_hat, &truth.support, rule),
                mse: mse(&r.x_hat, &truth.x_gen).map_err(|e| e.to_string())?,
                iterations: r.iterations,
            })
        })
        .collect::<Result<_, String>>()?;
    Ok(Recovery {
        support: truth.support.clone(),
        true_row_norms: row_norms(&truth.x_gen),
        estimates,
    })
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

fn ar1_toeplitz(l: usize, beta: f64) -> DMatrix<f64> {
    DMatrix::from_fn(l, l, |i, j| beta.powi(i.abs_diff(j) as i32))
}

/// Relative error of the Kronecker inverse approximation over a log grid of
/// noise variances, for a random N×2N dictionary with N active entries.
pub fn approximation_curve(n: usize, l: usize, beta: f64, seed: u64) -> Result<Curve, String> {
    let seed = TrialSeed::new(seed, 1, 0);
    let m = 2 * n;
    let phi = sample_dictionary(
        n,
        m,
        DictionaryKind::UnitHypersphere,
        &mut seed.rng(Stream::Dictionary),
    )
    .map_err(|e| e.to_string())?;
    let mut rng = seed.rng(Stream::Support);
    let gamma = DVector::from_fn(m, |i, _| if i < n { rng.gen_range(0.2..1.0) } else { 0.0 });
    let b = ar1_toeplitz(l, beta);
    let lambdas: Vec<f64> = (0..=20)
        .map(|i| 10f64.powf(-8.0 + 0.5 * i as f64))
        .collect();
    let errors = lambdas
        .iter()
        .map(|&lam| approx_error(&phi, &gamma, &b, lam).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    Ok(Curve {
        x: lambdas,
        y: errors,
    })
}

/// Plotted in place of an infinite condition number.
pub const COND_CAP_LOG10: f64 = 16.0;

/// Mean `log10` condition number of K extreme-AR(1) sources of length L,
/// for C = 0, 1, ..., 10.
pub fn condition_curve(l: usize, k: usize, trials: usize, seed: u64) -> Result<Curve, String> {
    if trials == 0 {
        return Err("trials must be >= 1".into());
    }
    let cs: Vec<f64> = (0..=10).map(f64::from).collect();
    let mut means = Vec::with_capacity(cs.len());
    for (ci, &c) in cs.iter().enumerate() {
        let model = SourceModel {
            kind: SourceKind::CommonAr1 {
                beta: sample_extreme_beta(c),
            },
            rescale: Rescale::UnitNorm,
        };
        let mut total = 0.0;
        for t in 0..trials {
            let mut rng = TrialSeed::new(seed, ci as u64, t as u64).rng(Stream::Sources);
            let (x, support) = gen_sources(k, l, k, &model, &mut rng).map_err(|e| e.to_string())?;
            let cond = source_condition_number(&x, &support).map_err(|e| e.to_string())?;
            total += cond.log10().min(COND_CAP_LOG10);
        }
        means.push(total / trials as f64);
    }
    Ok(Curve { x: cs, y: means })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = recover)]
pub fn recover_js(
    n: usize,
    m: usize,
    l: usize,
    k: usize,
    beta: f64,
    snr_db: f64,
    seed: u32,
) -> Result<String, JsError> {
    to_json(recover(n, m, l, k, beta, snr_db, seed.into()))
}

#[wasm_bindgen(js_name = approximationCurve)]
pub fn approximation_curve_js(n: usize, l: usize, beta: f64, seed: u32) -> Result<String, JsError> {
    to_json(approximation_curve(n, l, beta, seed.into()))
}

#[wasm_bindgen(js_name = conditionCurve)]
pub fn condition_curve_js(l: usize, k: usize, trials: usize, seed: u32) -> Result<String, JsError> {
    to_json(condition_curve(l, k, trials, seed.into()))
}
