#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vireid_lab::MiniBatch;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_batch(rng: &mut impl Rng, p: usize, k: usize, dim: usize) -> MiniBatch {
    let rows = (0..2 * p * k)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    MiniBatch::from_embeddings(p, k, rows).unwrap()
}

/// Random batch with P ∈ {2,3}, K ∈ {1,2,3}, D ∈ {2,5}.
pub fn random_small_batch(rng: &mut impl Rng) -> MiniBatch {
    let p = rng.random_range(2..=3);
    let k = rng.random_range(1..=3);
    let dim = if rng.random_bool(0.5) { 2 } else { 5 };
    random_batch(rng, p, k, dim)
}

pub fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

pub fn unflatten(flat: &[f64], dim: usize) -> Vec<Vec<f64>> {
    flat.chunks(dim).map(|c| c.to_vec()).collect()
}
