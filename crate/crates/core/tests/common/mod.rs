#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sampleinfo::ingest::{JacobianStore, LayerSketch, Provenance};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vec(len: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

/// Unsketched store with two layers splitting `d` columns.
pub fn random_store(n: usize, k: usize, d: usize, rng: &mut ChaCha8Rng) -> JacobianStore {
    let jac = gaussian(n * k, d, rng) / (d as f64).sqrt();
    let f0 = gaussian(n, k, rng) * 0.1;
    let split = d / 2;
    let layers = if split == 0 {
        vec![LayerSketch::full("a", d)]
    } else {
        vec![LayerSketch::full("a", split), LayerSketch::full("b", d - split)]
    };
    JacobianStore::new(k, layers, jac, f0, Provenance::default()).unwrap()
}

/// Store that shares the coordinates (layers) of `like`.
pub fn random_store_like(like: &JacobianStore, n: usize, rng: &mut ChaCha8Rng) -> JacobianStore {
    let d = like.d0();
    let k = like.k();
    let jac = gaussian(n * k, d, rng) / (d as f64).sqrt();
    JacobianStore::new(k, like.layers().to_vec(), jac, gaussian(n, k, rng) * 0.1, Provenance::default()).unwrap()
}

pub fn random_targets(n: usize, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    gaussian(n, k, rng)
}

/// `AAᵀ/d + floor·I`
pub fn random_spd(d: usize, floor: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = gaussian(d, d, rng);
    let mut m = &a * a.transpose() / d as f64;
    for i in 0..d {
        m[(i, i)] += floor;
    }
    (&m + m.transpose()) / 2.0
}

pub fn uniform(lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(lo..hi)
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
