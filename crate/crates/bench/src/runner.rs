//! Monte Carlo sweep over the grid cells of an experiment.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rayon::prelude::*;
use tsbl_core::datagen::{generate_problem, TrialSeed};
use tsbl_core::metrics::{is_failure, mse, CardinalityAudit, FailureRule};
use tsbl_core::tmsbl::NOISELESS_LAMBDA;
use tsbl_core::{
    msbl_solve, tmsbl_solve, tsbl_solve, LambdaPolicy, MmvProblem, Regime, Result as CoreResult,
    SolverResult, TmsblOptions, TsblOptions,
};

use crate::config::{
    default_lambda_grid, Algorithm, Cell, ExperimentConfig, LambdaMode, SolverOverrides,
};
use crate::error::BenchError;

/// Salt separating tuning trials from the measured ones.
const TUNING_SALT: u64 = 0x7475_6e65;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub cell: Cell,
    pub trial: usize,
    pub algorithm: Algorithm,
    pub failure: bool,
    pub mse: Option<f64>,
    pub iterations: usize,
    pub wall_ms: f64,
    pub gamma_card: usize,
    pub converged: bool,
    pub error_tag: Option<String>,
}

/// Noise policy for one algorithm in one cell once `LambdaMode` is resolved.
fn base_policy(mode: &LambdaMode, cell: &Cell) -> LambdaPolicy {
    match mode {
        LambdaMode::Fixed(v) => LambdaPolicy::Fixed(*v),
        LambdaMode::Learned => LambdaPolicy::Learned,
        LambdaMode::Auto | LambdaMode::GridSearch { .. } => {
            if cell.snr_db.is_none() {
                LambdaPolicy::Fixed(NOISELESS_LAMBDA)
            } else {
                LambdaPolicy::Learned
            }
        }
    }
}

/// Runs one algorithm with the configured options.
pub fn solve(
    alg: Algorithm,
    problem: &MmvProblem,
    cell: &Cell,
    overrides: &SolverOverrides,
    policy: LambdaPolicy,
) -> CoreResult<SolverResult> {
    match alg {
        Algorithm::Tsbl | Algorithm::Msbl => {
            let mut o = TsblOptions {
                lambda_policy: policy,
                ..TsblOptions::default()
            };
            if let Some(v) = overrides.max_iters {
                o.max_iters = v;
            }
            if let Some(v) = overrides.gamma_tol {
                o.gamma_tol = v;
            }
            if let Some(v) = overrides.prune_thresh {
                o.prune_thresh = v;
            }
            if alg == Algorithm::Tsbl {
                tsbl_solve(problem, &o)
            } else {
                msbl_solve(problem, &o)
            }
        }
        Algorithm::Tmsbl => {
            let regime = overrides
                .tmsbl_regime
                .unwrap_or_else(|| Regime::from_snr_db(cell.snr()));
            let mut o = TmsblOptions::preset(regime);
            o.lambda_policy = policy;
            if let Some(v) = overrides.max_iters {
                o.max_iters = v;
            }
            if let Some(v) = overrides.gamma_tol {
                o.gamma_tol = v;
            }
            if let Some(v) = overrides.prune_thresh {
                o.prune_thresh = v;
            }
            tmsbl_solve(problem, &o)
        }
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".to_string()
    }
}

fn failed_record(
    cell: &Cell,
    trial: usize,
    alg: Algorithm,
    tag: String,
    wall_ms: f64,
) -> TrialRecord {
    TrialRecord {
        cell: cell.clone(),
        trial,
        algorithm: alg,
        failure: true,
        mse: None,
        iterations: 0,
        wall_ms,
        gamma_card: 0,
        converged: false,
        error_tag: Some(tag),
    }
}

fn run_one(
    cell: &Cell,
    trial: usize,
    alg: Algorithm,
    problem: &MmvProblem,
    cfg: &ExperimentConfig,
    policy: LambdaPolicy,
) -> TrialRecord {
    let t0 = Instant::now();
    let out = catch_unwind(AssertUnwindSafe(|| {
        solve(alg, problem, cell, &cfg.solver, policy)
    }));
    let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
    let truth = problem
        .truth
        .as_ref()
        .expect("generated problems carry truth");
    match out {
        Ok(Ok(r)) => TrialRecord {
            cell: cell.clone(),
            trial,
            algorithm: alg,
            failure: is_failure(&r.x_hat, &truth.support, FailureRule::for_snr(cell.snr())),
            mse: mse(&r.x_hat, &truth.x_gen).ok(),
            iterations: r.iterations,
            wall_ms,
            gamma_card: r.gamma_cardinality(),
            converged: r.converged,
            error_tag: None,
        },
        Ok(Err(e)) => failed_record(cell, trial, alg, format!("error: {e}"), wall_ms),
        Err(p) => failed_record(
            cell,
            trial,
            alg,
            format!("panic: {}", panic_message(p)),
            wall_ms,
        ),
    }
}

fn run_trial(
    cfg: &ExperimentConfig,
    cell: &Cell,
    trial: usize,
    policies: &BTreeMap<Algorithm, LambdaPolicy>,
) -> Vec<TrialRecord> {
    let algs: Vec<Algorithm> = cfg
        .algorithms
        .iter()
        .copied()
        .filter(|&a| trial < cfg.trials_for(a))
        .collect();
    let seed = TrialSeed::new(cfg.master_seed, cell.index as u64, trial as u64);
    let problem = match generate_problem(&cell.problem_spec(), &seed) {
        Ok(p) => p,
        Err(e) => {
            return algs
                .into_iter()
                .map(|a| failed_record(cell, trial, a, format!("generator: {e}"), 0.0))
                .collect()
        }
    };
    algs.into_iter()
        .map(|a| run_one(cell, trial, a, &problem, cfg, policies[&a]))
        .collect()
}

/// Mean failure rate of `alg` with a fixed noise variance over tuning trials.
fn tuning_failure_rate(
    cfg: &ExperimentConfig,
    cell: &Cell,
    alg: Algorithm,
    lambda: f64,
    trials: usize,
) -> f64 {
    let mut fails = 0usize;
    for t in 0..trials {
        let seed = TrialSeed::new(cfg.master_seed ^ TUNING_SALT, cell.index as u64, t as u64);
        let Ok(problem) = generate_problem(&cell.problem_spec(), &seed) else {
            fails += 1;
            continue;
        };
        fails += run_one(cell, t, alg, &problem, cfg, LambdaPolicy::Fixed(lambda)).failure as usize;
    }
    fails as f64 / trials as f64
}

/// Candidate with the lowest tuning failure rate (first wins on ties).
pub fn select_lambda(
    cfg: &ExperimentConfig,
    cell: &Cell,
    alg: Algorithm,
    grid: &[f64],
    trials: usize,
) -> f64 {
    let mut best = (f64::INFINITY, grid[0]);
    for &lam in grid {
        let rate = tuning_failure_rate(cfg, cell, alg, lam, trials);
        if rate < best.0 {
            best = (rate, lam);
        }
    }
    best.1
}

fn resolve_policies(
    cfg: &ExperimentConfig,
    cells: &[Cell],
) -> Vec<BTreeMap<Algorithm, LambdaPolicy>> {
    match &cfg.solver.lambda {
        LambdaMode::GridSearch { trials, grid } => {
            let grid = grid.clone().unwrap_or_else(default_lambda_grid);
            let jobs: Vec<(usize, Algorithm)> = cells
                .iter()
                .flat_map(|c| cfg.algorithms.iter().map(move |&a| (c.index, a)))
                .collect();
            let picks: Vec<f64> = jobs
                .par_iter()
                .map(|&(ci, a)| select_lambda(cfg, &cells[ci], a, &grid, *trials))
                .collect();
            let mut out = vec![BTreeMap::new(); cells.len()];
            for ((ci, a), lam) in jobs.into_iter().zip(picks) {
                out[ci].insert(a, LambdaPolicy::Fixed(lam));
            }
            out
        }
        mode => cells
            .iter()
            .map(|c| {
                cfg.algorithms
                    .iter()
                    .map(|&a| (a, base_policy(mode, c)))
                    .collect()
            })
            .collect(),
    }
}

/// Runs every (cell, trial, algorithm) combination. Output is ordered by
/// cell, then trial, then the configured algorithm order, independent of
/// `jobs`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    jobs: Option<usize>,
) -> Result<Vec<TrialRecord>, BenchError> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| BenchError::Pool(e.to_string()))?;
    let cells = cfg.cells();
    pool.install(|| {
        let policies = resolve_policies(cfg, &cells);
        let tasks: Vec<(usize, usize)> = cells
            .iter()
            .flat_map(|c| (0..cfg.trials).map(move |t| (c.index, t)))
            .collect();
        let nested: Vec<Vec<TrialRecord>> = tasks
            .par_iter()
            .map(|&(ci, t)| run_trial(cfg, &cells[ci], t, &policies[ci]))
            .collect();
        Ok(nested.into_iter().flatten().collect())
    })
}

/// `‖γ̂‖₀ ≤ NL` audit over converged records.
pub fn cardinality_audit(records: &[TrialRecord]) -> CardinalityAudit {
    let mut audit = CardinalityAudit::default();
    for r in records.iter().filter(|r| r.error_tag.is_none()) {
        audit.record(r.gamma_card, r.converged, r.cell.n, r.cell.l);
    }
    audit
}
