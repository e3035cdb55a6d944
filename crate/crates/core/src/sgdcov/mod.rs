//! Gradient-noise covariance of SGD, its Lyapunov steady state, and an SDE
//! simulator used to check the steady state empirically.

mod toy;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{ensure_dim, Error, Result};
use crate::ingest::{flatten_rows, JacobianStore};
use crate::linalg::{check_spd, symmetrize_mut, SymEigen};

pub use toy::{toy_unique_info, ToyConfig, ToyResult, ToySample};

/// Per-sample gradients and their covariance at a fixed weight vector.
#[derive(Debug, Clone)]
pub struct GradNoise {
    /// `d × n`, one gradient per column.
    pub per_sample: DMatrix<f64>,
    pub mean: DVector<f64>,
    /// `(1/n) Σ (gᵢ − g)(gᵢ − g)ᵀ`
    pub cov: DMatrix<f64>,
}

impl GradNoise {
    pub fn from_gradients(per_sample: DMatrix<f64>) -> Result<Self> {
        let n = per_sample.ncols();
        if n == 0 {
            return Err(Error::InvalidArgument("gradient noise needs at least one sample".into()));
        }
        let mean = per_sample.column_mean();
        let mut centered = per_sample.clone();
        for mut c in centered.column_iter_mut() {
            c -= &mean;
        }
        let mut cov = &centered * centered.transpose() / n as f64;
        symmetrize_mut(&mut cov);
        Ok(GradNoise {
            per_sample,
            mean,
            cov,
        })
    }
}

/// Gradients of the per-sample linearized MSE `½‖f_w(xᵢ) − yᵢ‖²` plus the
/// weight-decay term `λ_wd (w − w₀)`, at `w = w₀ + w_delta`.
///
/// The decay term is shared by every sample, so it moves the mean gradient
/// but cancels from the covariance.
pub fn grad_noise(
    store: &JacobianStore,
    targets: &DMatrix<f64>,
    w_delta: &DVector<f64>,
    weight_decay: f64,
) -> Result<GradNoise> {
    let (n, k, d) = (store.n(), store.k(), store.d0());
    ensure_dim(targets.shape() == (n, k) && w_delta.len() == d, || {
        format!(
            "targets {}x{} and delta of length {} vs store n={n}, k={k}, d0={d}",
            targets.nrows(),
            targets.ncols(),
            w_delta.len()
        )
    })?;
    if weight_decay < 0.0 || !weight_decay.is_finite() {
        return Err(Error::InvalidArgument(format!("weight decay {weight_decay} must be nonnegative")));
    }
    let g = store.jacobian();
    let residual = g * w_delta + store.f0_vector() - flatten_rows(targets);
    let mut per_sample = DMatrix::zeros(d, n);
    for i in 0..n {
        let rows = g.rows(i * k, k);
        let grad = rows.tr_mul(&residual.rows(i * k, k)) + w_delta * weight_decay;
        per_sample.set_column(i, &grad);
    }
    GradNoise::from_gradients(per_sample)
}

/// Solves `HΣ + ΣH = Q` for symmetric `Q` in the eigenbasis of `H`.
pub fn lyapunov_solve(h: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = check_spd(h)?;
    ensure_dim(q.shape() == h.shape(), || {
        format!("Q is {}x{}, H is {}x{}", q.nrows(), q.ncols(), h.nrows(), h.ncols())
    })?;
    let v = &eig.vectors;
    let mut qt = v.transpose() * q * v;
    let d = eig.dim();
    for i in 0..d {
        for j in 0..d {
            qt[(i, j)] /= eig.values[i] + eig.values[j];
        }
    }
    let mut sigma = v * qt * v.transpose();
    symmetrize_mut(&mut sigma);
    Ok(sigma)
}

/// `(ησ²/2b) H⁻¹`, the steady state under isotropic gradient noise.
pub fn stationary_isotropic(h: &DMatrix<f64>, eta: f64, batch: usize, sigma2: f64) -> Result<DMatrix<f64>> {
    if !(eta > 0.0 && sigma2 > 0.0 && batch > 0) {
        return Err(Error::InvalidArgument(format!(
            "η = {eta}, b = {batch}, σ² = {sigma2} must all be positive"
        )));
    }
    let eig = check_spd(h)?;
    let c = eta * sigma2 / (2.0 * batch as f64);
    Ok(eig.map(|v| c / v))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdeConfig {
    pub eta: f64,
    pub batch: usize,
    /// Recorded steps per chain, after burn-in.
    pub steps: usize,
    pub burn_in: usize,
    /// Integration step; defaults to `0.02 / (η λ_max(H))`.
    pub dt: Option<f64>,
    pub chains: usize,
    pub seed: u64,
}

impl Default for SdeConfig {
    fn default() -> Self {
        SdeConfig {
            eta: 1.0,
            batch: 1,
            steps: 1_000_000,
            burn_in: 10_000,
            dt: None,
            chains: 1,
            seed: 0,
        }
    }
}

/// Post-burn-in moments of a simulated SDE.
#[derive(Debug, Clone)]
pub struct SdeMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Batch-means standard error of each coordinate of `mean`.
    pub mean_stderr: DVector<f64>,
    pub dt: f64,
    pub samples: usize,
}

const BATCHES: usize = 50;

struct ChainStats {
    sum: DVector<f64>,
    outer: DMatrix<f64>,
    batch_sums: Vec<DVector<f64>>,
}

/// Euler–Maruyama simulation of `dw = −ηH(w − w*)dt + η √(Λ/b) dW`
/// started at `w*`.
pub fn simulate_sde(
    h: &DMatrix<f64>,
    w_star: &DVector<f64>,
    noise: &DMatrix<f64>,
    config: &SdeConfig,
) -> Result<SdeMoments> {
    let d = w_star.len();
    ensure_dim(h.shape() == (d, d) && noise.shape() == (d, d), || {
        format!("H is {}x{}, Λ is {}x{}, w* has length {d}", h.nrows(), h.ncols(), noise.nrows(), noise.ncols())
    })?;
    if !(config.eta > 0.0) || config.batch == 0 || config.steps == 0 || config.chains == 0 {
        return Err(Error::InvalidArgument("η, b, steps and chains must be positive".into()));
    }
    let lambda_max = check_spd(h)?.values[d - 1];
    let dt = config.dt.unwrap_or(0.02 / (config.eta * lambda_max));
    let a = dt * config.eta * lambda_max;
    if !(dt > 0.0) || a >= 0.5 {
        return Err(Error::Unstable(format!("δ·η·λ_max = {a} must lie in (0, 0.5)")));
    }
    let mut noise_eig = SymEigen::new(noise);
    let floor = -1e-10 * noise_eig.max_abs().max(f64::MIN_POSITIVE);
    if noise_eig.values[0] < floor {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: noise_eig.values[0],
        });
    }
    noise_eig.values.apply(|v| *v = v.max(0.0));
    let root = noise_eig.map(f64::sqrt) * (config.eta * (dt / config.batch as f64).sqrt());
    let drift = h * (config.eta * dt);
    let per_batch = config.steps.div_ceil(BATCHES);

    let chains: Vec<ChainStats> = (0..config.chains)
        .into_par_iter()
        .map(|chain| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(chain as u64);
            let mut x = DVector::<f64>::zeros(d);
            let mut xi = DVector::<f64>::zeros(d);
            let mut stats = ChainStats {
                sum: DVector::zeros(d),
                outer: DMatrix::zeros(d, d),
                batch_sums: vec![DVector::zeros(d); config.steps.div_ceil(per_batch)],
            };
            for step in 0..config.burn_in + config.steps {
                for v in xi.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                x -= &drift * &x;
                x += &root * &xi;
                if step >= config.burn_in {
                    let s = step - config.burn_in;
                    stats.sum += &x;
                    stats.outer.ger(1.0, &x, &x, 1.0);
                    stats.batch_sums[s / per_batch] += &x;
                }
            }
            stats
        })
        .collect();

    let total = (config.steps * config.chains) as f64;
    let mut sum = DVector::zeros(d);
    let mut outer = DMatrix::zeros(d, d);
    let mut batch_means = Vec::new();
    for c in &chains {
        sum += &c.sum;
        outer += &c.outer;
        for (b, bs) in c.batch_sums.iter().enumerate() {
            let len = per_batch.min(config.steps - b * per_batch) as f64;
            batch_means.push(bs / len);
        }
    }
    let offset = sum / total;
    let mut cov = outer / total - &offset * offset.transpose();
    symmetrize_mut(&mut cov);
    let nb = batch_means.len() as f64;
    let mean_stderr = DVector::from_fn(d, |j, _| {
        let var = batch_means.iter().map(|m| (m[j] - offset[j]).powi(2)).sum::<f64>() / (nb - 1.0).max(1.0);
        (var / nb).sqrt()
    });
    Ok(SdeMoments {
        mean: w_star + offset,
        cov,
        mean_stderr,
        dt,
        samples: total as usize,
    })
}
