//! CSV output and per-cell aggregation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::{Algorithm, Cell, ExperimentConfig};
use crate::error::BenchError;
use crate::plot;
use crate::runner::TrialRecord;

pub const SCHEMA_VERSION: u32 = 1;

pub const RAW_HEADER: [&str; 18] = [
    "schema_version",
    "experiment_id",
    "n",
    "m",
    "l",
    "k",
    "snr_db",
    "source_kind",
    "source_param",
    "trial",
    "algorithm",
    "failure",
    "mse",
    "iterations",
    "wall_ms",
    "gamma_card",
    "converged",
    "error_tag",
];

pub const SUMMARY_HEADER: [&str; 15] = [
    "schema_version",
    "experiment_id",
    "n",
    "m",
    "l",
    "k",
    "snr_db",
    "source_kind",
    "source_param",
    "algorithm",
    "trials",
    "failure_rate",
    "mean_mse",
    "mean_iterations",
    "errors",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawCsvOptions {
    /// Unix time written as a leading `#` line.
    pub timestamp: Option<u64>,
    /// When false the wall_ms column is left empty so output is reproducible.
    pub wall_time: bool,
}

impl RawCsvOptions {
    pub fn reproducible() -> Self {
        Self {
            timestamp: None,
            wall_time: false,
        }
    }
}

fn snr_field(snr_db: Option<f64>) -> String {
    snr_db.map_or_else(|| "inf".to_string(), |s| s.to_string())
}

fn cell_fields(cell: &Cell) -> [String; 7] {
    [
        cell.n.to_string(),
        cell.m.to_string(),
        cell.l.to_string(),
        cell.k.to_string(),
        snr_field(cell.snr_db),
        cell.source.label.to_string(),
        cell.source.param.to_string(),
    ]
}

pub fn write_raw_csv<W: Write>(
    mut w: W,
    experiment_id: &str,
    records: &[TrialRecord],
    opts: RawCsvOptions,
) -> Result<(), BenchError> {
    if let Some(ts) = opts.timestamp {
        writeln!(w, "# generated_unix_time={ts}").map_err(|e| BenchError::Io {
            path: "raw csv".into(),
            source: e,
        })?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RAW_HEADER)?;
    for r in records {
        let mut row: Vec<String> = vec![SCHEMA_VERSION.to_string(), experiment_id.to_string()];
        row.extend(cell_fields(&r.cell));
        row.extend([
            r.trial.to_string(),
            r.algorithm.to_string(),
            (r.failure as u8).to_string(),
            r.mse.map_or_else(String::new, |v| format!("{v:e}")),
            r.iterations.to_string(),
            if opts.wall_time {
                format!("{:.3}", r.wall_ms)
            } else {
                String::new()
            },
            r.gamma_card.to_string(),
            (r.converged as u8).to_string(),
            r.error_tag.clone().unwrap_or_default(),
        ]);
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| BenchError::Io {
        path: "raw csv".into(),
        source: e,
    })?;
    Ok(())
}

/// Aggregate over the trials of one (cell, algorithm) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub cell: Cell,
    pub algorithm: Algorithm,
    pub trials: usize,
    pub failure_rate: f64,
    /// Mean over trials with a defined MSE; `None` if there were none.
    pub mean_mse: Option<f64>,
    pub mean_iterations: f64,
    pub errors: usize,
}

/// Groups records by (cell, algorithm), keeping first-appearance order.
pub fn summarize(records: &[TrialRecord]) -> Result<Vec<SummaryRow>, BenchError> {
    if records.is_empty() {
        return Err(BenchError::EmptyRecords);
    }
    let mut groups: Vec<((usize, Algorithm), Vec<&TrialRecord>)> = Vec::new();
    for r in records {
        let key = (r.cell.index, r.algorithm);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    Ok(groups
        .into_iter()
        .map(|((_, alg), rs)| {
            let n = rs.len() as f64;
            let mses: Vec<f64> = rs.iter().filter_map(|r| r.mse).collect();
            SummaryRow {
                cell: rs[0].cell.clone(),
                algorithm: alg,
                trials: rs.len(),
                failure_rate: rs.iter().filter(|r| r.failure).count() as f64 / n,
                mean_mse: (!mses.is_empty()).then(|| mses.iter().sum::<f64>() / mses.len() as f64),
                mean_iterations: rs.iter().map(|r| r.iterations as f64).sum::<f64>() / n,
                errors: rs.iter().filter(|r| r.error_tag.is_some()).count(),
            }
        })
        .collect())
}

/// Summary row for `alg` in the first cell matching `pred`.
pub fn find_row(
    rows: &[SummaryRow],
    alg: Algorithm,
    pred: impl Fn(&Cell) -> bool,
) -> Option<&SummaryRow> {
    rows.iter().find(|r| r.algorithm == alg && pred(&r.cell))
}

pub fn write_summary_csv<W: Write>(
    w: W,
    experiment_id: &str,
    rows: &[SummaryRow],
) -> Result<(), BenchError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_HEADER)?;
    for r in rows {
        let mut row: Vec<String> = vec![SCHEMA_VERSION.to_string(), experiment_id.to_string()];
        row.extend(cell_fields(&r.cell));
        row.extend([
            r.algorithm.to_string(),
            r.trials.to_string(),
            r.failure_rate.to_string(),
            r.mean_mse.map_or_else(String::new, |v| format!("{v:e}")),
            r.mean_iterations.to_string(),
            r.errors.to_string(),
        ]);
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| BenchError::Io {
        path: "summary csv".into(),
        source: e,
    })?;
    Ok(())
}

fn create(path: &Path) -> Result<fs::File, BenchError> {
    fs::File::create(path).map_err(|e| BenchError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Writes the raw CSV, the summary CSV and (if enabled) the plots into
/// `dir`. Returns the written paths.
pub fn emit_report(
    records: &[TrialRecord],
    cfg: &ExperimentConfig,
    dir: &Path,
    opts: RawCsvOptions,
) -> Result<Vec<PathBuf>, BenchError> {
    let rows = summarize(records)?;
    fs::create_dir_all(dir).map_err(|e| BenchError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let raw = dir.join(&cfg.output.raw_csv);
    write_raw_csv(
        std::io::BufWriter::new(create(&raw)?),
        &cfg.experiment_id,
        records,
        opts,
    )?;
    let summary = dir.join(&cfg.output.summary_csv);
    write_summary_csv(
        std::io::BufWriter::new(create(&summary)?),
        &cfg.experiment_id,
        &rows,
    )?;
    let mut written = vec![raw, summary];
    if cfg.output.plots {
        for (name, svg) in plot::figures(&rows) {
            let p = dir.join(name);
            fs::write(&p, svg).map_err(|e| BenchError::Io {
                path: p.display().to_string(),
                source: e,
            })?;
            written.push(p);
        }
    }
    Ok(written)
}
