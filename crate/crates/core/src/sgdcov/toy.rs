//! Monte-Carlo unique information of one sample in a 2-D, two-class linear
//! regression trained with SGD, next to the Gaussian leave-one-out KL that
//! upper-bounds it.

use nalgebra::{Cholesky, DMatrix, DVector, Vector2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::kl_gaussian;
use crate::linalg::SplitMix64;

const DIM: usize = 2;

/// Which training sample to remove.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToySample {
    /// Farthest from its class mean.
    MostExtreme,
    /// Closest to its class mean.
    Typical,
    Index(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub per_class: usize,
    /// Classes are centred at `(±offset, 0)`.
    pub offset: f64,
    pub std: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// SGD runs per fitted weight distribution.
    pub runs: usize,
    /// Replacement samples forming the marginal mixture.
    pub resamples: usize,
    /// Draws for the Monte-Carlo KL against the mixture.
    pub draws: usize,
    pub sample: ToySample,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            per_class: 40,
            offset: 2.0,
            std: 1.0,
            epochs: 200,
            batch: 5,
            lr: 0.1,
            runs: 500,
            resamples: 20,
            draws: 100_000,
            sample: ToySample::MostExtreme,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyResult {
    pub index: usize,
    pub mc_unique_info: f64,
    pub loo_kl: f64,
}

struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    inv: DMatrix<f64>,
    log_norm: f64,
}

impl Gaussian {
    fn fit(samples: &[Vector2<f64>]) -> Result<Self> {
        let n = samples.len() as f64;
        let mean: Vector2<f64> = samples.iter().sum::<Vector2<f64>>() / n;
        let mut cov = DMatrix::zeros(DIM, DIM);
        for s in samples {
            let c = s - mean;
            for i in 0..DIM {
                for j in 0..DIM {
                    cov[(i, j)] += c[i] * c[j] / (n - 1.0);
                }
            }
        }
        let chol = Cholesky::new(cov.clone())
            .ok_or(Error::Singular("weight covariance of SGD runs".into()))?;
        let l = chol.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v: &f64| v.ln()).sum::<f64>();
        Ok(Gaussian {
            mean: DVector::from_column_slice(mean.as_slice()),
            inv: chol.inverse(),
            chol: l,
            cov,
            log_norm: -0.5 * (log_det + DIM as f64 * (2.0 * std::f64::consts::PI).ln()),
        })
    }

    fn log_pdf(&self, w: &DVector<f64>) -> f64 {
        let c = w - &self.mean;
        self.log_norm - 0.5 * c.dot(&(&self.inv * &c))
    }
}

struct ToyData {
    x: Vec<Vector2<f64>>,
    y: Vec<f64>,
}

fn draw_point(offset: f64, std: f64, rng: &mut ChaCha8Rng) -> (Vector2<f64>, f64) {
    let y = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let noise = Normal::new(0.0, std).expect("std checked positive");
    let x = Vector2::new(offset * y + noise.sample(rng), noise.sample(rng));
    (x, y)
}

/// Weight samples from independent SGD runs (mean-over-batch squared loss,
/// zero init, reshuffled every epoch).
fn sgd_cloud(data: &ToyData, config: &ToyConfig, seed: u64) -> Vec<Vector2<f64>> {
    let n = data.x.len();
    (0..config.runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(run as u64);
            let mut order: Vec<usize> = (0..n).collect();
            let mut w = Vector2::zeros();
            for _ in 0..config.epochs {
                order.shuffle(&mut rng);
                for chunk in order.chunks(config.batch) {
                    let mut g = Vector2::zeros();
                    for &i in chunk {
                        g += data.x[i] * (data.x[i].dot(&w) - data.y[i]);
                    }
                    w -= g * (config.lr / chunk.len() as f64);
                }
            }
            w
        })
        .collect()
}

/// Returns the Monte-Carlo estimate of `KL(p(w|S) ‖ E_{z'} p(w|S₋ᵢ ∪ {z'}))`
/// and the Gaussian `KL(p(w|S) ‖ p(w|S₋ᵢ))`.
pub fn toy_unique_info(config: &ToyConfig, seed: u64) -> Result<ToyResult> {
    if config.runs < DIM + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} SGD runs cannot estimate a {DIM}-d covariance",
            config.runs
        )));
    }
    if config.per_class == 0 || config.batch == 0 || config.resamples == 0 || config.draws == 0 {
        return Err(Error::InvalidArgument("toy sizes must be positive".into()));
    }
    if !(config.std > 0.0 && config.lr > 0.0) {
        return Err(Error::InvalidArgument("std and learning rate must be positive".into()));
    }
    let mut seeds = SplitMix64::new(seed);
    let mut data_rng = ChaCha8Rng::seed_from_u64(seeds.next_u64());
    let noise = Normal::new(0.0, config.std).expect("checked");
    let mut data = ToyData { x: Vec::new(), y: Vec::new() };
    for label in [1.0, -1.0] {
        for _ in 0..config.per_class {
            data.x.push(Vector2::new(config.offset * label + noise.sample(&mut data_rng), noise.sample(&mut data_rng)));
            data.y.push(label);
        }
    }
    let n = data.x.len();
    let dist = |i: usize| (data.x[i] - Vector2::new(config.offset * data.y[i], 0.0)).norm();
    let index = match config.sample {
        ToySample::Index(i) if i < n => i,
        ToySample::Index(i) => {
            return Err(Error::InvalidArgument(format!("sample {i} out of range for {n} points")))
        }
        ToySample::MostExtreme => (0..n).max_by(|&a, &b| dist(a).total_cmp(&dist(b))).expect("n > 0"),
        ToySample::Typical => (0..n).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).expect("n > 0"),
    };
    let minus = ToyData {
        x: data.x.iter().enumerate().filter(|(j, _)| *j != index).map(|(_, v)| *v).collect(),
        y: data.y.iter().enumerate().filter(|(j, _)| *j != index).map(|(_, v)| *v).collect(),
    };

    let full = Gaussian::fit(&sgd_cloud(&data, config, seeds.next_u64()))?;
    let without = Gaussian::fit(&sgd_cloud(&minus, config, seeds.next_u64()))?;
    let loo_kl = kl_gaussian(&full.mean, &full.cov, &without.mean, &without.cov)?;

    let mut resample_rng = ChaCha8Rng::seed_from_u64(seeds.next_u64());
    let mut components = Vec::with_capacity(config.resamples);
    for _ in 0..config.resamples {
        let (x, y) = draw_point(config.offset, config.std, &mut resample_rng);
        let mut swapped = ToyData { x: minus.x.clone(), y: minus.y.clone() };
        swapped.x.push(x);
        swapped.y.push(y);
        components.push(Gaussian::fit(&sgd_cloud(&swapped, config, seeds.next_u64()))?);
    }

    let mut draw_rng = ChaCha8Rng::seed_from_u64(seeds.next_u64());
    let log_m = (config.resamples as f64).ln();
    let mut total = 0.0;
    let mut logs = vec![0.0; components.len()];
    for _ in 0..config.draws {
        let z = DVector::from_fn(DIM, |_, _| StandardNormal.sample(&mut draw_rng));
        let w = &full.mean + &full.chol * z;
        for (slot, c) in logs.iter_mut().zip(&components) {
            *slot = c.log_pdf(&w);
        }
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mix = top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln() - log_m;
        total += full.log_pdf(&w) - mix;
    }
    Ok(ToyResult {
        index,
        mc_unique_info: total / config.draws as f64,
        loo_kl,
    })
}
