#![allow(dead_code)]

use mgfa::model::{Component, MgfaParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn random_positive(rng: &mut impl Rng, len: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(lo..hi))
}

/// Random orthogonal matrix from the QR factorization of a Gaussian-ish draw.
pub fn random_orthogonal(rng: &mut impl Rng, k: usize) -> DMatrix<f64> {
    random_matrix(rng, k, k, 1.0).qr().q()
}

/// Mixture with well-separated means spaced `spread` apart along a random
/// direction per component.
pub fn random_params(rng: &mut impl Rng, g: usize, d: usize, q: usize, spread: f64) -> MgfaParams {
    let raw: Vec<f64> = (0..g).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let components = (0..g)
        .map(|k| Component {
            weight: raw[k] / total,
            mean: DVector::from_fn(d, |_, _| spread * k as f64 + rng.random_range(-0.5..0.5)),
            loadings: random_matrix(rng, d, q, 1.0),
            uniquenesses: random_positive(rng, d, 0.1, 1.0),
        })
        .collect();
    MgfaParams::new(components).unwrap()
}
