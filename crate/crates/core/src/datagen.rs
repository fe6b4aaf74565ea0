//! Seeded synthetic data: dictionaries, temporally correlated sources, noise.
//!
//! Randomness comes from ChaCha8 generators. A trial is identified by
//! `(master_seed, cell, trial)`; those three values are mixed into a 256-bit
//! key, and each consumer draws from its own ChaCha stream under that key:
//!
//! | stream | used for                          |
//! |--------|-----------------------------------|
//! | 1      | dictionary (columns or row picks) |
//! | 2      | support indices                   |
//! | 3      | source rows and their parameters  |
//! | 4      | measurement noise                 |
//!
//! Streams are independent, so changing e.g. the noise level never perturbs
//! the dictionary or the sources of the same trial.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SblError};
use crate::model::{GroundTruth, MmvProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Dictionary = 1,
    Support = 2,
    Sources = 3,
    Noise = 4,
}

/// Identifies one Monte Carlo trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrialSeed {
    pub master: u64,
    pub cell: u64,
    pub trial: u64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl TrialSeed {
    pub fn new(master: u64, cell: u64, trial: u64) -> Self {
        Self {
            master,
            cell,
            trial,
        }
    }

    pub fn rng(&self, stream: Stream) -> ChaCha8Rng {
        let mut state = self.master;
        let a = splitmix64(&mut state);
        state ^= self.cell.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        let b = splitmix64(&mut state);
        state ^= self.trial.wrapping_mul(0xA076_1D64_78BD_642F);
        let c = splitmix64(&mut state);
        let d = splitmix64(&mut state);
        let mut key = [0u8; 32];
        for (chunk, word) in key.chunks_exact_mut(8).zip([a, b, c, d]) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream as u64);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictionaryKind {
    /// Columns drawn uniformly from the unit sphere in R^N.
    UnitHypersphere,
    /// N distinct rows of the M×M Sylvester Hadamard matrix (±1 entries).
    HadamardRows,
}

/// Temporal structure of each nonzero source row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceKind {
    /// AR(1) with one coefficient shared by all sources. `|beta| = 1` gives
    /// rows that are exactly (anti)constant.
    CommonAr1 { beta: f64 },
    /// AR(1) with `beta_i ~ U(low, high)` drawn per source.
    PerSourceAr1 { low: f64, high: f64 },
    /// AR(p); coefficients sampled uniformly over the stable region when
    /// `coeffs` is absent.
    Ar {
        order: usize,
        coeffs: Option<Vec<f64>>,
    },
    /// MA(p); coefficients sampled from `(0, 1]` when `coeffs` is absent.
    Ma {
        order: usize,
        coeffs: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rescale {
    /// Row norms uniform on `[1/3, 1]`.
    NoiselessUniform,
    /// Unit row norms.
    UnitNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    #[serde(flatten)]
    pub kind: SourceKind,
    pub rescale: Rescale,
}

impl SourceModel {
    pub fn common_ar1(beta: f64, rescale: Rescale) -> Self {
        Self {
            kind: SourceKind::CommonAr1 { beta },
            rescale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            SourceKind::CommonAr1 { beta } => {
                if !(beta.abs() <= 1.0) {
                    return Err(SblError::Generator(format!(
                        "AR(1) coefficient {beta} is unstable"
                    )));
                }
            }
            SourceKind::PerSourceAr1 { low, high } => {
                if !(low.abs() < 1.0 && high.abs() <= 1.0 && low <= high) {
                    return Err(SblError::Generator(format!(
                        "invalid AR(1) range ({low}, {high})"
                    )));
                }
            }
            SourceKind::Ar { order, coeffs } => {
                if *order == 0 {
                    return Err(SblError::Generator("AR order must be >= 1".into()));
                }
                if let Some(c) = coeffs {
                    if c.len() != *order {
                        return Err(SblError::Generator(
                            "AR coefficient count differs from order".into(),
                        ));
                    }
                    if !ar_is_stable(c) {
                        return Err(SblError::Generator(format!(
                            "AR coefficients {c:?} are unstable"
                        )));
                    }
                }
            }
            SourceKind::Ma { order, coeffs } => {
                if let Some(c) = coeffs {
                    if c.len() != *order {
                        return Err(SblError::Generator(
                            "MA coefficient count differs from order".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `sign(c) · (1 − 10^{−|c|})`.
pub fn sample_extreme_beta(c: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        c.signum() * (1.0 - 10f64.powf(-c.abs()))
    }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Sylvester Hadamard entry `H[i, j] = (−1)^{popcount(i & j)}`.
fn hadamard_entry(i: usize, j: usize) -> f64 {
    if (i & j).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

pub fn sample_dictionary<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    kind: DictionaryKind,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if n == 0 || n > m {
        return Err(SblError::Generator(format!(
            "need 1 <= N <= M, got N={n}, M={m}"
        )));
    }
    match kind {
        DictionaryKind::UnitHypersphere => {
            let mut phi = DMatrix::zeros(n, m);
            for j in 0..m {
                let mut col = DVector::from_fn(n, |_, _| standard_normal(rng));
                let mut norm = col.norm();
                while !(norm > 0.0) {
                    col = DVector::from_fn(n, |_, _| standard_normal(rng));
                    norm = col.norm();
                }
                phi.set_column(j, &(col / norm));
            }
            Ok(phi)
        }
        DictionaryKind::HadamardRows => {
            if !m.is_power_of_two() {
                return Err(SblError::Generator(format!(
                    "Hadamard order {m} is not a power of two"
                )));
            }
            let mut rows = sample(rng, m, n).into_vec();
            rows.sort_unstable();
            Ok(DMatrix::from_fn(n, m, |r, c| hadamard_entry(rows[r], c)))
        }
    }
}

/// Characteristic roots of `x_t = Σ a_j x_{t−j}` all strictly inside the unit circle.
pub fn ar_is_stable(coeffs: &[f64]) -> bool {
    let p = coeffs.len();
    if p == 0 {
        return true;
    }
    if coeffs.iter().any(|c| !c.is_finite()) {
        return false;
    }
    let companion = DMatrix::from_fn(p, p, |r, c| {
        if r == 0 {
            coeffs[c]
        } else if r == c + 1 {
            1.0
        } else {
            0.0
        }
    });
    companion
        .complex_eigenvalues()
        .iter()
        .all(|z| z.norm() < 1.0 - 1e-12)
}

/// Hard cap on stability rejection draws.
pub const MAX_STABILITY_DRAWS: usize = 10_000;

/// Uniform draw from the stationarity region of AR(p).
///
/// Partial autocorrelations `r_k` are drawn independently with
/// `(r_k + 1)/2 ~ Beta(⌊(k+1)/2⌋, ⌊k/2⌋ + 1)` and mapped to coefficients by
/// the Durbin–Levinson recursion; this induces the uniform distribution on
/// the region. Each proposal is still checked on its characteristic roots
/// and rejected if it lands on the boundary numerically.
pub fn sample_stable_ar<R: Rng + ?Sized>(order: usize, rng: &mut R) -> Result<Vec<f64>> {
    for _ in 0..MAX_STABILITY_DRAWS {
        let mut a: Vec<f64> = Vec::with_capacity(order);
        for k in 1..=order {
            let alpha = k.div_ceil(2) as f64;
            let beta = (k / 2 + 1) as f64;
            let r = 2.0 * Beta::new(alpha, beta).expect("valid beta").sample(rng) - 1.0;
            let prev = a.clone();
            for j in 0..prev.len() {
                a[j] = prev[j] - r * prev[prev.len() - 1 - j];
            }
            a.push(r);
        }
        if ar_is_stable(&a) {
            return Ok(a);
        }
    }
    Err(SblError::Generator(format!(
        "no stable AR({order}) draw within {MAX_STABILITY_DRAWS} attempts"
    )))
}

/// Stationary covariance of the AR state `(x_{t−1}, …, x_{t−p})` under
/// unit-variance innovations.
fn ar_state_covariance(coeffs: &[f64]) -> Result<DMatrix<f64>> {
    let p = coeffs.len();
    let f = DMatrix::from_fn(p, p, |r, c| {
        if r == 0 {
            coeffs[c]
        } else if r == c + 1 {
            1.0
        } else {
            0.0
        }
    });
    // vec(Σ) = (I − F⊗F)⁻¹ vec(e₁e₁ᵀ)
    let lhs = DMatrix::identity(p * p, p * p) - f.kronecker(&f);
    let mut rhs = DVector::zeros(p * p);
    rhs[0] = 1.0;
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| SblError::Generator("AR stationary covariance is singular".into()))?;
    let mut sigma = DMatrix::from_column_slice(p, p, sol.as_slice());
    crate::linalg::symmetrize(&mut sigma);
    Ok(sigma)
}

fn simulate_ar<R: Rng + ?Sized>(coeffs: &[f64], l: usize, rng: &mut R) -> Result<Vec<f64>> {
    let p = coeffs.len();
    let chol = crate::linalg::factor_spd(&ar_state_covariance(coeffs)?, "AR state covariance")?;
    let z = DVector::from_fn(p, |_, _| standard_normal(rng));
    let state = chol.l() * z;
    // history[j] = x_{−1−j}
    let mut hist: Vec<f64> = state.iter().copied().collect();
    let mut out = Vec::with_capacity(l);
    for _ in 0..l {
        let next: f64 =
            coeffs.iter().zip(&hist).map(|(a, x)| a * x).sum::<f64>() + standard_normal(rng);
        out.push(next);
        hist.rotate_right(1);
        hist[0] = next;
    }
    Ok(out)
}

fn simulate_ar1<R: Rng + ?Sized>(beta: f64, l: usize, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(l);
    if beta.abs() >= 1.0 {
        let mut x = standard_normal(rng);
        for _ in 0..l {
            out.push(x);
            x *= beta;
        }
        return out;
    }
    let mut x = standard_normal(rng) / (1.0 - beta * beta).sqrt();
    for _ in 0..l {
        x = beta * x + standard_normal(rng);
        out.push(x);
    }
    out
}

fn simulate_ma<R: Rng + ?Sized>(coeffs: &[f64], l: usize, rng: &mut R) -> Vec<f64> {
    let p = coeffs.len();
    // hist[j] = e_{t−1−j}
    let mut hist: Vec<f64> = (0..p).map(|_| standard_normal(rng)).collect();
    let mut out = Vec::with_capacity(l);
    for _ in 0..l {
        let e = standard_normal(rng);
        out.push(e + coeffs.iter().zip(&hist).map(|(b, x)| b * x).sum::<f64>());
        if p > 0 {
            hist.rotate_right(1);
            hist[0] = e;
        }
    }
    out
}

/// One unscaled source row.
fn source_row<R: Rng + ?Sized>(kind: &SourceKind, l: usize, rng: &mut R) -> Result<Vec<f64>> {
    match kind {
        SourceKind::CommonAr1 { beta } => Ok(simulate_ar1(*beta, l, rng)),
        SourceKind::PerSourceAr1 { low, high } => {
            let beta = if low == high {
                *low
            } else {
                rng.gen_range(*low..*high)
            };
            Ok(simulate_ar1(beta, l, rng))
        }
        SourceKind::Ar { order, coeffs } => {
            let c = match coeffs {
                Some(c) => c.clone(),
                None => sample_stable_ar(*order, rng)?,
            };
            simulate_ar(&c, l, rng)
        }
        SourceKind::Ma { order, coeffs } => {
            let c = match coeffs {
                Some(c) => c.clone(),
                // (0, 1]
                None => (0..*order).map(|_| 1.0 - rng.gen::<f64>()).collect(),
            };
            Ok(simulate_ma(&c, l, rng))
        }
    }
}

/// Sorted support of size `k` drawn uniformly without replacement.
pub fn sample_support<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k > m {
        return Err(SblError::Generator(format!("K={k} exceeds M={m}")));
    }
    let mut s = sample(rng, m, k).into_vec();
    s.sort_unstable();
    Ok(s)
}

/// Fills the rows in `support` with rescaled source realizations.
pub fn gen_source_rows<R: Rng + ?Sized>(
    m: usize,
    l: usize,
    support: &[usize],
    model: &SourceModel,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    model.validate()?;
    let mut x = DMatrix::zeros(m, l);
    for &i in support {
        let mut row = source_row(&model.kind, l, rng)?;
        let mut norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        while !(norm > 0.0) {
            row = source_row(&model.kind, l, rng)?;
            norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        let target = match model.rescale {
            Rescale::UnitNorm => 1.0,
            Rescale::NoiselessUniform => rng.gen_range(1.0 / 3.0..=1.0),
        };
        for (t, v) in row.iter().enumerate() {
            x[(i, t)] = v * target / norm;
        }
    }
    Ok(x)
}

/// Source matrix with `k` nonzero rows at a uniformly drawn support.
pub fn gen_sources<R: Rng + ?Sized>(
    m: usize,
    l: usize,
    k: usize,
    model: &SourceModel,
    rng: &mut R,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let support = sample_support(m, k, rng)?;
    let x = gen_source_rows(m, l, &support, model, rng)?;
    Ok((x, support))
}

/// Adds white Gaussian noise scaled so that
/// `20 log10(‖clean‖_F / ‖V‖_F) = snr_db` exactly. `+∞` returns `clean`.
pub fn add_noise<R: Rng + ?Sized>(
    clean: &DMatrix<f64>,
    snr_db: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if snr_db == f64::INFINITY {
        return Ok(clean.clone());
    }
    if !snr_db.is_finite() {
        return Err(SblError::Generator(format!("invalid SNR {snr_db}")));
    }
    let signal = clean.norm();
    if !(signal > 0.0) {
        return Err(SblError::Generator(
            "SNR requested for an all-zero signal".into(),
        ));
    }
    let v = DMatrix::from_fn(clean.nrows(), clean.ncols(), |_, _| standard_normal(rng));
    let scale = signal / (v.norm() * 10f64.powf(snr_db / 20.0));
    Ok(clean + v * scale)
}

/// Everything needed to draw one synthetic problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub k: usize,
    pub dictionary: DictionaryKind,
    pub source: SourceModel,
    /// `f64::INFINITY` for noiseless.
    pub snr_db: f64,
}

pub fn generate_problem(spec: &ProblemSpec, seed: &TrialSeed) -> Result<MmvProblem> {
    let phi = sample_dictionary(
        spec.n,
        spec.m,
        spec.dictionary,
        &mut seed.rng(Stream::Dictionary),
    )?;
    let support = sample_support(spec.m, spec.k, &mut seed.rng(Stream::Support))?;
    let x = gen_source_rows(
        spec.m,
        spec.l,
        &support,
        &spec.source,
        &mut seed.rng(Stream::Sources),
    )?;
    let y = add_noise(&(&phi * &x), spec.snr_db, &mut seed.rng(Stream::Noise))?;
    MmvProblem::new(phi, y)?.with_truth(GroundTruth {
        x_gen: x,
        support,
        snr_db: spec.snr_db,
    })
}
