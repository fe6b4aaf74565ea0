#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tsbl_core::{Hyperparams, MmvProblem};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

/// Well-conditioned SPD matrix with unit Frobenius norm.
pub fn random_spd(r: &mut ChaCha8Rng, l: usize) -> DMatrix<f64> {
    let g = gaussian(r, l, l);
    let b = &g * g.transpose() + DMatrix::identity(l, l) * 0.5;
    let f = b.norm();
    b / f
}

pub struct Instance {
    pub problem: MmvProblem,
    pub hyper: Hyperparams,
}

/// N ≤ 6, M ≤ 12, L ≤ 4, every γ > 0.
pub fn random_instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let n = r.gen_range(2..=6);
    let m = r.gen_range(n..=12);
    let l = r.gen_range(1..=4);
    sized_instance(&mut r, n, m, l)
}

pub fn sized_instance(r: &mut ChaCha8Rng, n: usize, m: usize, l: usize) -> Instance {
    let phi = gaussian(r, n, m) / (n as f64).sqrt();
    let y = gaussian(r, n, l);
    let gamma = DVector::from_fn(m, |_, _| r.gen_range(0.2..2.0));
    let b = random_spd(r, l);
    let lambda = r.gen_range(0.05..1.0);
    Instance {
        problem: MmvProblem::new(phi, y).unwrap(),
        hyper: Hyperparams::new(gamma, b, lambda).unwrap(),
    }
}

pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(f64::MIN_POSITIVE)
}

pub fn vec_rel_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(f64::MIN_POSITIVE)
}
