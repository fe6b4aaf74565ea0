use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use tsbl_bench::report::{emit_report, RawCsvOptions};
use tsbl_bench::runner::cardinality_audit;
use tsbl_bench::{checks, run_experiment, BenchError, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "tsbl-bench",
    version,
    about = "Monte Carlo benchmarks for temporally correlated SBL solvers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the number of trials per cell.
        #[arg(long)]
        trials: Option<usize>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Omit the timestamp line and wall times so output is byte-reproducible.
        #[arg(long)]
        no_timestamp: bool,
    },
    /// Print the default config as JSON.
    PrintDefaults,
    /// Run the numerical self-checks.
    Verify,
}

fn run(
    config: PathBuf,
    trials: Option<usize>,
    seed: Option<u64>,
    jobs: Option<usize>,
    out: Option<PathBuf>,
    no_timestamp: bool,
) -> Result<(), BenchError> {
    let text = std::fs::read_to_string(&config).map_err(|e| BenchError::Io {
        path: config.display().to_string(),
        source: e,
    })?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(o) = out {
        cfg.output.dir = o;
    }
    cfg.validate()?;
    let records = run_experiment(&cfg, jobs)?;
    let opts = if no_timestamp {
        RawCsvOptions::reproducible()
    } else {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        RawCsvOptions {
            timestamp: Some(now),
            wall_time: true,
        }
    };
    let files = emit_report(&records, &cfg, &cfg.output.dir, opts)?;
    let errors = records.iter().filter(|r| r.error_tag.is_some()).count();
    let audit = cardinality_audit(&records);
    eprintln!(
        "{} records ({errors} solver errors); {} converged, max gamma cardinality {}, bound violations {}",
        records.len(),
        audit.checked,
        audit.max_card,
        audit.violations
    );
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            trials,
            seed,
            jobs,
            out,
            no_timestamp,
        } => match run(config, trials, seed, jobs, out, no_timestamp) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
        Command::PrintDefaults => {
            println!("{}", ExperimentConfig::default().to_json());
            ExitCode::SUCCESS
        }
        Command::Verify => {
            let outcomes = checks::verify_suite();
            for o in &outcomes {
                println!("{o}");
            }
            if outcomes.iter().all(|o| o.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
