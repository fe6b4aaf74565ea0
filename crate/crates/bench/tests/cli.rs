use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use tsbl_bench::report::{emit_report, write_raw_csv, RawCsvOptions};
use tsbl_bench::{run_experiment, ExperimentConfig};

const SMALL: &str = r#"{
    "experiment_id": "small",
    "trials": 6,
    "algorithms": ["tmsbl", "msbl", "tsbl"],
    "grid": {"n": [10], "m": [30], "l": [1, 3], "k": [4], "snr_db": [null, 20.0],
             "sources": [{"kind": "common_ar1", "beta": [0.8]}]},
    "output": {"plots": true}
}"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_json(SMALL).unwrap()
}

fn read_rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .unwrap();
    let headers = rdr.headers().unwrap().clone();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            headers
                .iter()
                .zip(r.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}

#[test]
fn summary_matches_independent_reaggregation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let records = run_experiment(&cfg, None).unwrap();
    let files = emit_report(
        &records,
        &cfg,
        dir.path(),
        RawCsvOptions {
            timestamp: Some(1),
            wall_time: true,
        },
    )
    .unwrap();
    assert!(files
        .iter()
        .any(|f| f.extension().is_some_and(|e| e == "svg")));

    let raw = read_rows(&dir.path().join("trials.csv"));
    assert_eq!(raw.len(), 4 * 6 * 3);
    let key_cols = [
        "n",
        "m",
        "l",
        "k",
        "snr_db",
        "source_kind",
        "source_param",
        "algorithm",
    ];
    // (failures, count, mse sum, mse count, iteration sum)
    let mut groups: BTreeMap<Vec<String>, (f64, f64, f64, f64, f64)> = BTreeMap::new();
    for r in &raw {
        let key: Vec<String> = key_cols.iter().map(|c| r[*c].clone()).collect();
        let g = groups.entry(key).or_default();
        g.0 += r["failure"].parse::<f64>().unwrap();
        g.1 += 1.0;
        if !r["mse"].is_empty() {
            g.2 += r["mse"].parse::<f64>().unwrap();
            g.3 += 1.0;
        }
        g.4 += r["iterations"].parse::<f64>().unwrap();
    }

    let summary = read_rows(&dir.path().join("summary.csv"));
    assert_eq!(summary.len(), groups.len());
    for s in &summary {
        let key: Vec<String> = key_cols.iter().map(|c| s[*c].clone()).collect();
        let (fails, n, mse_sum, mse_n, iters) = groups[&key];
        assert_eq!(s["trials"].parse::<f64>().unwrap(), n);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1e-300);
        assert!(
            close(s["failure_rate"].parse().unwrap(), fails / n),
            "{key:?}"
        );
        assert!(
            close(s["mean_iterations"].parse().unwrap(), iters / n),
            "{key:?}"
        );
        if mse_n > 0.0 {
            // The raw CSV rounds each MSE to shortest-repr; allow for that.
            let got: f64 = s["mean_mse"].parse().unwrap();
            assert!(
                (got - mse_sum / mse_n).abs() <= 1e-12 * got.abs().max(1e-300),
                "{key:?}"
            );
        }
    }
}

#[test]
fn raw_csv_is_independent_of_worker_count() {
    let cfg = small();
    let bytes = |jobs| {
        let recs = run_experiment(&cfg, Some(jobs)).unwrap();
        let mut buf = Vec::new();
        write_raw_csv(
            &mut buf,
            &cfg.experiment_id,
            &recs,
            RawCsvOptions::reproducible(),
        )
        .unwrap();
        buf
    };
    assert_eq!(bytes(1), bytes(3));
}

#[test]
fn trial_data_does_not_depend_on_algorithm_set() {
    // Each trial's problem is drawn from its own seed, so adding an algorithm
    // to the sweep leaves the records of the others untouched.
    let mut alone = small();
    alone.algorithms = vec![tsbl_bench::Algorithm::Tmsbl];
    let mut mixed = small();
    mixed.algorithms = vec![tsbl_bench::Algorithm::Msbl, tsbl_bench::Algorithm::Tmsbl];
    let strip = |recs: Vec<tsbl_bench::TrialRecord>| {
        recs.into_iter()
            .filter(|r| r.algorithm == tsbl_bench::Algorithm::Tmsbl)
            .map(|r| {
                (
                    r.cell.index,
                    r.trial,
                    r.failure,
                    r.mse.map(f64::to_bits),
                    r.iterations,
                )
            })
            .collect::<Vec<_>>()
    };
    let a = strip(run_experiment(&alone, None).unwrap());
    let b = strip(run_experiment(&mixed, None).unwrap());
    assert_eq!(a.len(), 4 * 6);
    assert_eq!(a, b);
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tsbl-bench"))
}

#[test]
fn print_defaults_roundtrips() {
    let out = bin().arg("print-defaults").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        ExperimentConfig::from_json(&text).unwrap(),
        ExperimentConfig::default()
    );
}

#[test]
fn run_writes_reproducible_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, SMALL).unwrap();
    let run = |out: &str, extra: &[&str]| {
        let status = bin()
            .args(["run", "--config"])
            .arg(&cfg_path)
            .args(["--trials", "2", "--out"])
            .arg(dir.path().join(out))
            .args(extra)
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
        fs::read_to_string(dir.path().join(out).join("trials.csv")).unwrap()
    };
    let a = run("a", &["--no-timestamp", "--jobs", "1"]);
    let b = run("b", &["--no-timestamp", "--jobs", "2"]);
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 1 + 4 * 2 * 3);
    let stamped = run("c", &[]);
    assert!(stamped.starts_with("# generated_unix_time="));
    let c = run("d", &["--no-timestamp", "--seed", "99"]);
    assert_ne!(a, c);
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = bin()
        .args(["run", "--config"])
        .arg(dir.path().join("nope.json"))
        .output()
        .unwrap();
    assert!(!missing.status.success());

    let cfg_path = dir.path().join("bad.json");
    fs::write(&cfg_path, r#"{"trials": 0}"#).unwrap();
    let invalid = bin()
        .args(["run", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(!invalid.status.success());
    assert!(String::from_utf8_lossy(&invalid.stderr).contains("trials"));

    // Output directory path that is an existing regular file.
    fs::write(&cfg_path, SMALL).unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let unwritable = bin()
        .args(["run", "--trials", "1", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&blocker)
        .output()
        .unwrap();
    assert!(!unwritable.status.success());
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::from_json(&fs::read_to_string(&path).unwrap())
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.validate().unwrap();
        assert!(!cfg.cells().is_empty());
        seen += 1;
    }
    assert!(seen >= 4);
}
