//! Closed-form gradient-flow dynamics of a linearized network under MSE loss.
//!
//! With weight decay λ the weights evolve as
//! `ω(t) = ∇f₀(X) Mₜ (Y − f₀(X))`, `Mₜ = (Θ₀+λI)⁻¹(I − e^{−ηt(Θ₀+λI)})`,
//! and predictions as `f₀(x) + Θ₀(x, X) Mₜ (Y − f₀(X))`. Only the product ηt
//! enters; `time` may be `f64::INFINITY`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::ingest::{flatten_rows, JacobianStore};
use crate::linalg::SymEigen;
use crate::ntk::Kernel;

/// Which smoothing covariance a score uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothingMode {
    #[default]
    Identity,
    IsotropicSgd,
    Lyapunov,
    Fisher,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Learning rate per unit of continuous time.
    pub eta: f64,
    /// Training time; `f64::INFINITY` selects the steady state.
    #[serde(with = "time_serde")]
    pub time: f64,
    pub lambda: f64,
    pub batch: usize,
    pub sigma: f64,
    pub smoothing: SmoothingMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 1e-3,
            time: 2000.0,
            lambda: 0.0,
            batch: 1,
            sigma: 1.0,
            smoothing: SmoothingMode::Identity,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("learning rate η = {} must be positive", self.eta));
        }
        if !(self.time >= 0.0) {
            return bad(format!("training time t = {} must be ≥ 0", self.time));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("weight decay λ = {} must be ≥ 0", self.lambda));
        }
        if self.batch == 0 {
            return bad("batch size must be ≥ 1".into());
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("σ = {} must be positive", self.sigma));
        }
        Ok(())
    }

    pub fn eta_t(&self) -> f64 {
        self.eta * self.time
    }
}

mod time_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
        if t.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*t)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Time {
            Num(f64),
            Str(String),
        }
        match Time::deserialize(d)? {
            Time::Num(v) => Ok(v),
            Time::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Time::Str(s) => Err(serde::de::Error::custom(format!("bad time '{s}'"))),
        }
    }
}

/// Spectral coefficient of Mₜ for an eigenvalue `mu` of Θ₀:
/// `(1 − e^{−ηt(μ+λ)}) / (μ+λ)`, with the limit ηt when μ+λ vanishes
/// (relative to `scale`) and `1/(μ+λ)` at t = ∞.
pub fn matfun_coefficient(mu: f64, eta_t: f64, lambda: f64, scale: f64) -> Result<f64> {
    let s = mu + lambda;
    let tiny = s.abs() <= 1e-12 * scale || s == 0.0;
    if eta_t.is_infinite() {
        if tiny {
            return Err(Error::Singular(
                "steady state requested with λ = 0 and a singular kernel".into(),
            ));
        }
        return Ok(1.0 / s);
    }
    if tiny {
        return Ok(eta_t);
    }
    Ok(-(-eta_t * s).exp_m1() / s)
}

/// Mₜ computed through an eigendecomposition of Θ₀.
pub fn matfun_eigen(eigen: &SymEigen, eta_t: f64, lambda: f64) -> Result<DMatrix<f64>> {
    if !(eta_t >= 0.0) {
        return Err(Error::InvalidArgument(format!("ηt = {eta_t} must be ≥ 0")));
    }
    let scale = eigen.max_abs() + lambda;
    let coeffs = eigen
        .values
        .iter()
        .map(|&mu| matfun_coefficient(mu, eta_t, lambda, scale))
        .collect::<Result<Vec<_>>>()?;
    let mut it = coeffs.into_iter();
    Ok(eigen.map(|_| it.next().expect("one coefficient per eigenvalue")))
}

/// Mₜ = (Θ₀+λI)⁻¹(I − e^{−ηt(Θ₀+λI)}) for the kernel's Θ₀.
pub fn matfun(kernel: &Kernel, t: f64, eta: f64, lambda: f64) -> Result<DMatrix<f64>> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("time t = {t} must be ≥ 0")));
    }
    let eta_t = if t.is_infinite() { f64::INFINITY } else { eta * t };
    matfun_eigen(kernel.eigen(), eta_t, lambda)
}

/// A training run of the linearized model, fixed by kernel, data and config.
#[derive(Debug, Clone)]
pub struct Trajectory<'a> {
    kernel: &'a Kernel,
    store: &'a JacobianStore,
    config: TrainConfig,
    residual: DVector<f64>,
    mt: DMatrix<f64>,
    alpha: DVector<f64>,
}

impl<'a> Trajectory<'a> {
    /// `targets` is `n × k`, as produced by target encoding.
    pub fn new(
        kernel: &'a Kernel,
        store: &'a JacobianStore,
        targets: &DMatrix<f64>,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        ensure_dim(kernel.dim() == store.n() * store.k() && kernel.k() == store.k(), || {
            format!(
                "kernel of size {} does not match store with n={}, k={}",
                kernel.dim(),
                store.n(),
                store.k()
            )
        })?;
        ensure_dim(targets.nrows() == store.n() && targets.ncols() == store.k(), || {
            format!(
                "targets are {}x{}, store has n={}, k={}",
                targets.nrows(),
                targets.ncols(),
                store.n(),
                store.k()
            )
        })?;
        let residual = flatten_rows(targets) - store.f0_vector();
        let mt = matfun(kernel, config.time, config.eta, config.lambda)?;
        let alpha = &mt * &residual;
        Ok(Trajectory {
            kernel,
            store,
            config,
            residual,
            mt,
            alpha,
        })
    }

    pub fn kernel(&self) -> &'a Kernel {
        self.kernel
    }

    pub fn store(&self) -> &'a JacobianStore {
        self.store
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Y − f₀(X), flattened sample-major.
    pub fn residual(&self) -> &DVector<f64> {
        &self.residual
    }

    pub fn matfun(&self) -> &DMatrix<f64> {
        &self.mt
    }

    /// Mₜ r, the dual coefficients of the trained model.
    pub fn dual(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// w_t − w₀ in the store's (possibly sketched) coordinates.
    pub fn weight_delta(&self) -> DVector<f64> {
        self.store.jacobian().tr_mul(&self.alpha)
    }

    /// Linearized predictions `f₀(x) + Θ₀(x, X) Mₜ r` for test points.
    pub fn prediction(&self, cross: &DMatrix<f64>, f0_test: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim(cross.ncols() == self.alpha.len() && cross.nrows() == f0_test.len(), || {
            format!(
                "cross kernel {}x{} vs {} train rows and {} test outputs",
                cross.nrows(),
                cross.ncols(),
                self.alpha.len(),
                f0_test.len()
            )
        })?;
        Ok(f0_test + cross * &self.alpha)
    }
}
