//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use tsbl_bench::checks::{self, CheckOutcome};
use tsbl_bench::report::{find_row, summarize, write_raw_csv, RawCsvOptions, SummaryRow};
use tsbl_bench::runner::cardinality_audit;
use tsbl_bench::{run_experiment, Algorithm, ExperimentConfig, TrialRecord};

struct Line {
    id: usize,
    passed: bool,
    detail: String,
}

fn from_check(id: usize, o: CheckOutcome) -> Line {
    Line {
        id,
        passed: o.passed,
        detail: format!(
            "{}: {} in {:.2}s",
            o.name,
            o.detail,
            o.elapsed.as_secs_f64()
        ),
    }
}

fn config(json: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(json).expect("acceptance config is valid")
}

fn run(cfg: &ExperimentConfig) -> (Vec<TrialRecord>, Vec<SummaryRow>, Duration) {
    let start = Instant::now();
    let records = run_experiment(cfg, None).expect("sweep runs");
    let elapsed = start.elapsed();
    let rows = summarize(&records).expect("records are non-empty");
    (records, rows, elapsed)
}

fn raw_bytes(cfg: &ExperimentConfig, records: &[TrialRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_raw_csv(
        &mut buf,
        &cfg.experiment_id,
        records,
        RawCsvOptions::reproducible(),
    )
    .expect("in-memory csv");
    buf
}

fn rate(rows: &[SummaryRow], alg: Algorithm, param: f64) -> f64 {
    find_row(rows, alg, |c| c.source.param == param)
        .unwrap_or_else(|| panic!("no {alg} row at {param}"))
        .failure_rate
}

fn noiseless_recovery() -> (Line, Vec<TrialRecord>) {
    let cfg = config(
        r#"{
        "experiment_id": "vary_beta_noiseless",
        "trials": 200,
        "algorithms": ["tmsbl", "msbl", "tsbl"],
        "trial_caps": {"tsbl": 100},
        "grid": {"n": [25], "m": [125], "l": [4], "k": [12], "snr_db": [null],
                 "sources": [{"kind": "common_ar1", "beta": [0.0, 0.5, 0.9, 0.99]}]},
        "solver": {"lambda": {"fixed": 1e-9}}
    }"#,
    );
    let (records, rows, t) = run(&cfg);
    let mut ok = true;
    let mut parts = Vec::new();
    for beta in [0.0, 0.5, 0.9, 0.99] {
        let (tm, ts, ms) = (
            rate(&rows, Algorithm::Tmsbl, beta),
            rate(&rows, Algorithm::Tsbl, beta),
            rate(&rows, Algorithm::Msbl, beta),
        );
        ok &= tm <= 0.05 && ts <= 0.05;
        if beta >= 0.9 {
            ok &= ms >= tm + 0.10;
        }
        parts.push(format!(
            "beta={beta}: tmsbl {tm:.3} tsbl {ts:.3} msbl {ms:.3}"
        ));
    }
    let detail = format!("{} ({:.0}s)", parts.join("; "), t.as_secs_f64());
    (
        Line {
            id: 5,
            passed: ok,
            detail,
        },
        records,
    )
}

fn source_count_config() -> ExperimentConfig {
    config(
        r#"{
        "experiment_id": "vary_k",
        "trials": 200,
        "algorithms": ["tmsbl", "msbl"],
        "grid": {"n": [25], "m": [125], "l": [4], "k": [16], "snr_db": [null],
                 "sources": [{"kind": "common_ar1", "beta": [0.9]}]}
    }"#,
    )
}

fn source_count() -> (Line, Vec<TrialRecord>) {
    let cfg = source_count_config();
    let (records, rows, t) = run(&cfg);
    let (tm, ms) = (
        rate(&rows, Algorithm::Tmsbl, 0.9),
        rate(&rows, Algorithm::Msbl, 0.9),
    );
    let ok = tm < ms - 0.15 && t < Duration::from_secs(15 * 60);
    let detail = format!("K=16: tmsbl {tm:.3} msbl {ms:.3} ({:.0}s)", t.as_secs_f64());
    (
        Line {
            id: 6,
            passed: ok,
            detail,
        },
        records,
    )
}

fn noisy_mse() -> (Line, Vec<TrialRecord>) {
    let cfg = config(
        r#"{
        "experiment_id": "noisy_mse",
        "trials": 200,
        "algorithms": ["tmsbl", "msbl"],
        "grid": {"n": [25], "m": [125], "l": [4], "k": [12], "snr_db": [25.0],
                 "sources": [{"kind": "common_ar1", "beta": [0.9]}]}
    }"#,
    );
    let (records, rows, t) = run(&cfg);
    let mse = |alg| {
        find_row(&rows, alg, |_| true)
            .and_then(|r| r.mean_mse)
            .unwrap_or(f64::INFINITY)
    };
    let (tm, ms) = (mse(Algorithm::Tmsbl), mse(Algorithm::Msbl));
    let ok = tm < ms && t < Duration::from_secs(20 * 60);
    let detail = format!(
        "25 dB: mean mse tmsbl {tm:.4e} msbl {ms:.4e} ({:.0}s)",
        t.as_secs_f64()
    );
    (
        Line {
            id: 7,
            passed: ok,
            detail,
        },
        records,
    )
}

fn extreme_correlation() -> (Line, Vec<TrialRecord>) {
    let cfg = config(
        r#"{
        "experiment_id": "extreme_correlation",
        "trials": 200,
        "algorithms": ["tmsbl", "msbl"],
        "grid": {"n": [40], "m": [128], "l": [3], "k": [12], "snr_db": [null],
                 "sources": [{"kind": "extreme_ar1", "c": [1.0, 10.0]}],
                 "dictionary": "hadamard_rows"}
    }"#,
    );
    let (records, rows, t) = run(&cfg);
    let (tm1, tm10) = (
        rate(&rows, Algorithm::Tmsbl, 1.0),
        rate(&rows, Algorithm::Tmsbl, 10.0),
    );
    let (ms1, ms10) = (
        rate(&rows, Algorithm::Msbl, 1.0),
        rate(&rows, Algorithm::Msbl, 10.0),
    );
    let ok = (tm10 - tm1).abs() <= 0.05 && ms10 >= ms1 + 0.10 && t < Duration::from_secs(20 * 60);
    let detail = format!(
        "tmsbl C=1 {tm1:.3} C=10 {tm10:.3}; msbl C=1 {ms1:.3} C=10 {ms10:.3} ({:.0}s)",
        t.as_secs_f64()
    );
    (
        Line {
            id: 8,
            passed: ok,
            detail,
        },
        records,
    )
}

fn cardinality(all: &[TrialRecord]) -> Line {
    let audit = cardinality_audit(all);
    let detail = format!(
        "{} runs, {} converged, max gamma cardinality {}, violations {}",
        all.len(),
        audit.checked,
        audit.max_card,
        audit.violations
    );
    Line {
        id: 9,
        passed: audit.holds() && audit.checked > 0,
        detail,
    }
}

fn reproducibility(first: &[TrialRecord]) -> Line {
    let cfg = source_count_config();
    let again = run_experiment(&cfg, Some(2)).expect("sweep runs");
    let (a, b) = (raw_bytes(&cfg, first), raw_bytes(&cfg, &again));
    let detail = format!(
        "rerun of vary_k with 2 workers: {} vs {} bytes",
        a.len(),
        b.len()
    );
    Line {
        id: 10,
        passed: a == b,
        detail,
    }
}

fn main() -> ExitCode {
    let mut lines = vec![
        from_check(1, checks::dual_forms_and_approximation()),
        from_check(2, checks::em_monotone()),
        from_check(3, checks::pinned_matches_baseline()),
        from_check(4, checks::closed_form_gamma_stationary()),
    ];
    for l in &lines {
        report(l);
    }
    let mut all = Vec::new();
    let (l5, r5) = noiseless_recovery();
    report(&l5);
    let (l6, r6) = source_count();
    report(&l6);
    let (l7, r7) = noisy_mse();
    report(&l7);
    let (l8, r8) = extreme_correlation();
    report(&l8);
    let l10 = reproducibility(&r6);
    for r in [r5, r6, r7, r8] {
        all.extend(r);
    }
    let l9 = cardinality(&all);
    report(&l9);
    report(&l10);
    lines.extend([l5, l6, l7, l8, l9, l10]);
    let failed: Vec<usize> = lines.iter().filter(|l| !l.passed).map(|l| l.id).collect();
    if failed.is_empty() {
        println!("all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}

fn report(l: &Line) {
    let tag = if l.passed { "PASS" } else { "FAIL" };
    println!("criterion {}: {tag} {}", l.id, l.detail);
}
