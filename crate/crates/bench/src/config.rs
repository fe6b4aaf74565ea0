//! Experiment configuration (JSON).

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use tsbl_core::datagen::{
    sample_extreme_beta, DictionaryKind, ProblemSpec, Rescale, SourceKind, SourceModel,
};
use tsbl_core::Regime;

use crate::error::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Tsbl,
    Tmsbl,
    Msbl,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Tsbl, Algorithm::Tmsbl, Algorithm::Msbl];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Tsbl => "tsbl",
            Algorithm::Tmsbl => "tmsbl",
            Algorithm::Msbl => "msbl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One axis of source models; every listed value becomes a grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceAxis {
    CommonAr1 {
        beta: Vec<f64>,
    },
    /// `β = sign(C)(1 − 10^{−|C|})` for each listed `C`.
    ExtremeAr1 {
        c: Vec<f64>,
    },
    PerSourceAr1 {
        low: f64,
        high: f64,
    },
    ArOrder {
        order: Vec<usize>,
    },
    MaOrder {
        order: Vec<usize>,
    },
}

/// A single point on a source axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcePoint {
    pub label: &'static str,
    pub param: f64,
    pub kind: SourceKind,
}

impl SourceAxis {
    pub fn points(&self) -> Vec<SourcePoint> {
        match self {
            SourceAxis::CommonAr1 { beta } => beta
                .iter()
                .map(|&b| SourcePoint {
                    label: "common_ar1",
                    param: b,
                    kind: SourceKind::CommonAr1 { beta: b },
                })
                .collect(),
            SourceAxis::ExtremeAr1 { c } => c
                .iter()
                .map(|&c| SourcePoint {
                    label: "extreme_ar1",
                    param: c,
                    kind: SourceKind::CommonAr1 {
                        beta: sample_extreme_beta(c),
                    },
                })
                .collect(),
            SourceAxis::PerSourceAr1 { low, high } => vec![SourcePoint {
                label: "per_source_ar1",
                param: *low,
                kind: SourceKind::PerSourceAr1 {
                    low: *low,
                    high: *high,
                },
            }],
            SourceAxis::ArOrder { order } => order
                .iter()
                .map(|&p| SourcePoint {
                    label: "ar",
                    param: p as f64,
                    kind: SourceKind::Ar {
                        order: p,
                        coeffs: None,
                    },
                })
                .collect(),
            SourceAxis::MaOrder { order } => order
                .iter()
                .map(|&p| SourcePoint {
                    label: "ma",
                    param: p as f64,
                    kind: SourceKind::Ma {
                        order: p,
                        coeffs: None,
                    },
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub n: Vec<usize>,
    /// Used when `m_over_n` is absent.
    pub m: Vec<usize>,
    /// `M = ratio · N` for each ratio; overrides `m` when present.
    pub m_over_n: Option<Vec<usize>>,
    pub l: Vec<usize>,
    pub k: Vec<usize>,
    /// `null` means noiseless.
    pub snr_db: Vec<Option<f64>>,
    pub sources: Vec<SourceAxis>,
    pub dictionary: DictionaryKind,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            n: vec![25],
            m: vec![125],
            m_over_n: None,
            l: vec![1, 2, 3, 4],
            k: vec![12],
            snr_db: vec![None],
            sources: vec![SourceAxis::CommonAr1 {
                beta: vec![-0.9, -0.5, 0.0, 0.5, 0.9, 0.99],
            }],
            dictionary: DictionaryKind::UnitHypersphere,
        }
    }
}

/// How each solver's noise variance is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaMode {
    /// Fixed `1e-9` when noiseless, learned otherwise.
    Auto,
    Fixed(f64),
    Learned,
    /// Fixed value picked per cell and algorithm by the lowest mean failure
    /// rate over `trials` tuning trials (seeded apart from the main run).
    GridSearch {
        trials: usize,
        grid: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOverrides {
    pub max_iters: Option<usize>,
    pub gamma_tol: Option<f64>,
    pub prune_thresh: Option<f64>,
    pub lambda: LambdaMode,
    /// Forces the T-MSBL preset instead of deriving it from each cell's SNR.
    pub tmsbl_regime: Option<Regime>,
}

impl Default for SolverOverrides {
    fn default() -> Self {
        Self {
            max_iters: None,
            gamma_tol: None,
            prune_thresh: None,
            lambda: LambdaMode::Auto,
            tmsbl_regime: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub raw_csv: String,
    pub summary_csv: String,
    pub plots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            raw_csv: "trials.csv".into(),
            summary_csv: "summary.csv".into(),
            plots: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub trials: usize,
    pub master_seed: u64,
    pub algorithms: Vec<Algorithm>,
    /// Per-algorithm cap on trials per cell (e.g. to run the slow solver on
    /// a prefix of the trials).
    pub trial_caps: BTreeMap<Algorithm, usize>,
    pub grid: Grid,
    pub solver: SolverOverrides,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment_id: "vary_l_noiseless".into(),
            trials: 200,
            master_seed: 2011,
            algorithms: vec![Algorithm::Tmsbl, Algorithm::Msbl],
            trial_caps: BTreeMap::new(),
            grid: Grid::default(),
            solver: SolverOverrides::default(),
            output: OutputConfig::default(),
        }
    }
}

/// One fully specified grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub k: usize,
    pub snr_db: Option<f64>,
    pub source: SourcePoint,
    pub dictionary: DictionaryKind,
}

impl Cell {
    pub fn snr(&self) -> f64 {
        self.snr_db.unwrap_or(f64::INFINITY)
    }

    pub fn problem_spec(&self) -> ProblemSpec {
        let rescale = if self.snr_db.is_some() {
            Rescale::UnitNorm
        } else {
            Rescale::NoiselessUniform
        };
        ProblemSpec {
            n: self.n,
            m: self.m,
            l: self.l,
            k: self.k,
            dictionary: self.dictionary,
            source: SourceModel {
                kind: self.source.kind.clone(),
                rescale,
            },
            snr_db: self.snr(),
        }
    }
}

fn nonempty<T>(v: &[T], what: &str) -> Result<(), BenchError> {
    if v.is_empty() {
        Err(BenchError::Config(format!("grid axis `{what}` is empty")))
    } else {
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let cfg = |m: String| Err(BenchError::Config(m));
        if self.trials == 0 {
            return cfg("trials must be >= 1".into());
        }
        if self.algorithms.is_empty() {
            return cfg("no algorithms selected".into());
        }
        if self.experiment_id.contains([',', '"', '\n']) {
            return cfg("experiment_id may not contain commas, quotes or newlines".into());
        }
        let g = &self.grid;
        nonempty(&g.n, "n")?;
        nonempty(&g.l, "l")?;
        nonempty(&g.k, "k")?;
        nonempty(&g.snr_db, "snr_db")?;
        nonempty(&g.sources, "sources")?;
        match &g.m_over_n {
            Some(r) => nonempty(r, "m_over_n")?,
            None => nonempty(&g.m, "m")?,
        }
        if let LambdaMode::Fixed(v) = self.solver.lambda {
            if !(v > 0.0) {
                return cfg("fixed lambda must be > 0".into());
            }
        }
        if let LambdaMode::GridSearch { trials, grid } = &self.solver.lambda {
            if *trials == 0
                || grid
                    .as_ref()
                    .is_some_and(|g| g.is_empty() || g.iter().any(|v| !(*v > 0.0)))
            {
                return cfg("grid search needs trials >= 1 and positive candidates".into());
            }
        }
        if let Some(t) = self.solver.prune_thresh {
            if !(t > 0.0) {
                return cfg("prune_thresh must be > 0".into());
            }
        }
        let cells = self.cells();
        if cells.is_empty() {
            return cfg("grid has no cells".into());
        }
        for c in &cells {
            if c.l == 0 || c.k == 0 || c.n == 0 {
                return cfg(format!("cell {}: N, L and K must be >= 1", c.index));
            }
            if c.k > c.m || c.n > c.m {
                return cfg(format!(
                    "cell {}: need K <= M and N <= M (N={}, M={}, K={})",
                    c.index, c.n, c.m, c.k
                ));
            }
            if c.dictionary == DictionaryKind::HadamardRows && !c.m.is_power_of_two() {
                return cfg(format!(
                    "cell {}: Hadamard dictionaries need M a power of two",
                    c.index
                ));
            }
            if let Some(s) = c.snr_db {
                if !s.is_finite() {
                    return cfg("snr_db values must be finite or null".into());
                }
            }
            c.problem_spec()
                .source
                .validate()
                .map_err(|e| BenchError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Cartesian product of the axes in the order n, m, l, k, snr, source.
    pub fn cells(&self) -> Vec<Cell> {
        let g = &self.grid;
        let sources: Vec<SourcePoint> = g.sources.iter().flat_map(|s| s.points()).collect();
        let mut out = Vec::new();
        for &n in &g.n {
            let ms: Vec<usize> = match &g.m_over_n {
                Some(r) => r.iter().map(|r| r * n).collect(),
                None => g.m.clone(),
            };
            for &m in &ms {
                for &l in &g.l {
                    for &k in &g.k {
                        for &snr_db in &g.snr_db {
                            for src in &sources {
                                out.push(Cell {
                                    index: out.len(),
                                    n,
                                    m,
                                    l,
                                    k,
                                    snr_db,
                                    source: src.clone(),
                                    dictionary: g.dictionary,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn trials_for(&self, alg: Algorithm) -> usize {
        self.trial_caps
            .get(&alg)
            .map_or(self.trials, |&c| c.min(self.trials))
    }
}

/// Default candidate noise variances: 10⁻⁴ … 10⁰, nine log-spaced points.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..9).map(|i| 10f64.powf(-4.0 + 0.5 * i as f64)).collect()
}
