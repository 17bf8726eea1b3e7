//! Deterministic sample generators.
//!
//! Low-discrepancy points come from the additive-recurrence sequence based
//! on the generalized golden ratio (the unique positive root of
//! `x^(d+1) = x + 1`); seeded randomness goes through one ChaCha generator
//! so every run is reproducible from `--seed`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{eps_pow, Weights};

/// Additive-recurrence low-discrepancy sequence in `[0,1)^dim`.
#[derive(Debug, Clone)]
pub struct RdSequence {
    alphas: Vec<f64>,
    index: u64,
}

impl RdSequence {
    pub fn new(dim: usize) -> Self {
        let phi = generalized_golden_ratio(dim);
        let mut alphas = Vec::with_capacity(dim);
        let mut a = 1.0;
        for _ in 0..dim {
            a /= phi;
            alphas.push(a);
        }
        RdSequence { alphas, index: 0 }
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        self.index += 1;
        let n = self.index as f64;
        self.alphas
            .iter()
            .map(|&a| (0.5 + n * a).fract())
            .collect()
    }

    pub fn take(&mut self, count: usize) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.next_point()).collect()
    }
}

fn generalized_golden_ratio(dim: usize) -> f64 {
    let d = dim as f64;
    let mut x = 1.5f64;
    for _ in 0..64 {
        // Newton on x^(d+1) - x - 1
        let f = x.powf(d + 1.0) - x - 1.0;
        let fp = (d + 1.0) * x.powf(d) - 1.0;
        x -= f / fp;
    }
    x
}

/// Seeded generator; all stochastic sampling flows through one of these.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Map a unit-cube point into `Box(r)`: `|x_k| < r^{sigma_k}`.
pub fn unit_to_box(u: &[f64], sigma: &Weights, r: f64) -> Vec<f64> {
    u.iter()
        .enumerate()
        .map(|(k, &t)| (2.0 * t - 1.0) * eps_pow(r, sigma.get(k)))
        .collect()
}

/// `count` low-discrepancy points in `Box(r)`.
pub fn low_discrepancy_box(sigma: &Weights, r: f64, count: usize) -> Vec<Vec<f64>> {
    let mut seq = RdSequence::new(sigma.dim());
    seq.take(count)
        .into_iter()
        .map(|u| unit_to_box(&u, sigma, r))
        .collect()
}

/// `count` low-discrepancy point pairs in `Box(r)`.
pub fn low_discrepancy_pairs(sigma: &Weights, r: f64, count: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let n = sigma.dim();
    let mut seq = RdSequence::new(2 * n);
    seq.take(count)
        .into_iter()
        .map(|u| {
            (
                unit_to_box(&u[..n], sigma, r),
                unit_to_box(&u[n..], sigma, r),
            )
        })
        .collect()
}

/// Directions on the unit quasisphere `quasinorm(x) = 1`: each sample pins
/// one coordinate to a face (`x_k = ±1`) and spreads the rest over the box.
pub fn quasisphere_directions(sigma: &Weights, count: usize) -> Vec<Vec<f64>> {
    let n = sigma.dim();
    let mut seq = RdSequence::new(n);
    (0..count)
        .map(|i| {
            let mut x: Vec<f64> = seq.next_point().iter().map(|&t| 2.0 * t - 1.0).collect();
            let face = i % (2 * n);
            x[face / 2] = if face % 2 == 0 { 1.0 } else { -1.0 };
            x
        })
        .collect()
}

/// Points `±(scale * r)^{sigma_k} e_k` on every coordinate axis.
pub fn axis_points(sigma: &Weights, r: f64, scale: f64) -> Vec<Vec<f64>> {
    let n = sigma.dim();
    let mut out = Vec::with_capacity(2 * n);
    for k in 0..n {
        for sign in [1.0, -1.0] {
            let mut x = vec![0.0; n];
            x[k] = sign * eps_pow(scale * r, sigma.get(k));
            out.push(x);
        }
    }
    out
}

/// Uniform random point in `Box(r)` from the shared generator.
pub fn random_in_box(rng: &mut ChaCha8Rng, sigma: &Weights, r: f64) -> Vec<f64> {
    (0..sigma.dim())
        .map(|k| {
            let bound = eps_pow(r, sigma.get(k));
            rng.gen_range(-bound..bound)
        })
        .collect()
}
