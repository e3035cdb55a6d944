//! Sample-information measures: smooth SI in weight space, smooth F-SI in
//! prediction space, and the Gaussian KL they both derive from.

pub mod report;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::ingest::JacobianStore;
use crate::linalg::{self, check_spd, quad_form, SymEigen};
use crate::loo::LooDeltas;

pub use report::{config_hash, Histogram, ScoreReport};

/// The smoothing covariance Σ added to the trained weights.
#[derive(Debug, Clone, PartialEq)]
pub enum SmoothingSpec {
    /// Σ = σ²I
    Identity { sigma2: f64 },
    /// An explicit SPD covariance.
    Explicit(DMatrix<f64>),
    /// SGD steady state with isotropic noise: Σ = (ησ²/2b) H⁻¹.
    IsotropicSgd {
        hessian: DMatrix<f64>,
        eta: f64,
        batch: usize,
        sigma2: f64,
    },
    /// Σ⁻¹ = F/σ², with F the Fisher information of the outputs.
    Fisher { fisher: DMatrix<f64>, sigma2: f64 },
}

/// Σ⁻¹ in a form cheap to apply repeatedly.
#[derive(Debug, Clone)]
pub enum Precision {
    Scalar(f64),
    Matrix(DMatrix<f64>),
}

impl Precision {
    pub fn quad(&self, v: &DVector<f64>) -> Result<f64> {
        match self {
            Precision::Scalar(s) => Ok(s * v.norm_squared()),
            Precision::Matrix(m) => {
                ensure_dim(m.nrows() == v.len(), || {
                    format!("precision is {}x{}, delta has length {}", m.nrows(), m.ncols(), v.len())
                })?;
                Ok(quad_form(v, m))
            }
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} = {v} must be positive")))
    }
}

impl SmoothingSpec {
    pub fn precision(&self) -> Result<Precision> {
        match self {
            SmoothingSpec::Identity { sigma2 } => {
                positive("σ²", *sigma2)?;
                Ok(Precision::Scalar(1.0 / sigma2))
            }
            SmoothingSpec::Explicit(sigma) => Ok(Precision::Matrix(check_spd(sigma)?.map(|v| 1.0 / v))),
            SmoothingSpec::IsotropicSgd {
                hessian,
                eta,
                batch,
                sigma2,
            } => {
                positive("η", *eta)?;
                positive("σ²", *sigma2)?;
                positive("b", *batch as f64)?;
                check_spd(hessian)?;
                Ok(Precision::Matrix(hessian * (2.0 * *batch as f64 / (eta * sigma2))))
            }
            SmoothingSpec::Fisher { fisher, sigma2 } => {
                positive("σ²", *sigma2)?;
                ensure_dim(fisher.is_square(), || "Fisher matrix must be square".into())?;
                Ok(Precision::Matrix(fisher / *sigma2))
            }
        }
    }
}

/// ½ Δwᵀ Σ⁻¹ Δw
pub fn si_smooth(delta_w: &DVector<f64>, spec: &SmoothingSpec) -> Result<f64> {
    Ok(0.5 * spec.precision()?.quad(delta_w)?)
}

/// Empirical F-SI of one sample: `(1/(2σ² n_val)) Σⱼ ‖Δf_j‖²`, where
/// `pred_delta` stacks the prediction changes on all validation points.
pub fn fsi_empirical_one(pred_delta: &DVector<f64>, sigma: f64, n_val: usize) -> Result<f64> {
    positive("σ", sigma)?;
    positive("n_val", n_val as f64)?;
    Ok(pred_delta.norm_squared() / (2.0 * sigma * sigma * n_val as f64))
}

/// [`fsi_empirical_one`] for every row of `pred_deltas`.
pub fn fsi_empirical(pred_deltas: &DMatrix<f64>, sigma: f64, n_val: usize) -> Result<Vec<f64>> {
    (0..pred_deltas.nrows())
        .map(|i| fsi_empirical_one(&pred_deltas.row(i).transpose(), sigma, n_val))
        .collect()
}

/// `(1/(2σ² n_val)) Δwᵀ(H_val − λI)Δw`
pub fn fsi_quadratic(
    delta_w: &DVector<f64>,
    h_val: &DMatrix<f64>,
    lambda: f64,
    sigma: f64,
    n_val: usize,
) -> Result<f64> {
    positive("σ", sigma)?;
    positive("n_val", n_val as f64)?;
    ensure_dim(h_val.is_square() && h_val.nrows() == delta_w.len(), || {
        format!("H_val is {}x{}, delta has length {}", h_val.nrows(), h_val.ncols(), delta_w.len())
    })?;
    let q = quad_form(delta_w, h_val) - lambda * delta_w.norm_squared();
    Ok(q / (2.0 * sigma * sigma * n_val as f64))
}

/// Hessian of the regularized validation MSE: `∇f₀(X_val)∇f₀(X_val)ᵀ + λI`.
pub fn validation_hessian(val_store: &JacobianStore, lambda: f64) -> DMatrix<f64> {
    let g = val_store.jacobian();
    let mut h = g.tr_mul(g);
    for i in 0..h.nrows() {
        h[(i, i)] += lambda;
    }
    h
}

/// Empirical Fisher `F = (1/m) Σⱼ J(xⱼ)ᵀJ(xⱼ)` over validation inputs.
pub fn fisher(val_store: &JacobianStore) -> Result<DMatrix<f64>> {
    if val_store.n() == 0 {
        return Err(Error::InvalidArgument("Fisher matrix needs at least one validation sample".into()));
    }
    let g = val_store.jacobian();
    let mut f = g.tr_mul(g) / val_store.n() as f64;
    linalg::symmetrize_mut(&mut f);
    Ok(f)
}

/// `(b/(ησ²)) Δwᵀ H Δw`, smooth SI under the isotropic SGD steady state.
pub fn si_isotropic_sgd(delta_w: &DVector<f64>, hessian: &DMatrix<f64>, eta: f64, batch: usize, sigma2: f64) -> Result<f64> {
    positive("η", eta)?;
    positive("σ²", sigma2)?;
    positive("b", batch as f64)?;
    check_spd(hessian)?;
    ensure_dim(hessian.nrows() == delta_w.len(), || "Hessian/delta size mismatch".into())?;
    Ok(batch as f64 / (eta * sigma2) * quad_form(delta_w, hessian))
}

/// KL(N(μ₁, Σ₁) ‖ N(μ₂, Σ₂)).
pub fn kl_gaussian(mu1: &DVector<f64>, sigma1: &DMatrix<f64>, mu2: &DVector<f64>, sigma2: &DMatrix<f64>) -> Result<f64> {
    let d = mu1.len();
    ensure_dim(
        mu2.len() == d && sigma1.shape() == (d, d) && sigma2.shape() == (d, d),
        || format!("Gaussian parameter shapes disagree (d = {d})"),
    )?;
    let e1 = check_spd(sigma1)?;
    let e2 = check_spd(sigma2)?;
    let logdet = |e: &SymEigen| e.values.iter().map(|v| v.ln()).sum::<f64>();
    let p2 = e2.map(|v| 1.0 / v);
    let diff = mu2 - mu1;
    let trace = (&p2 * sigma1).trace();
    let kl = 0.5 * (trace + quad_form(&diff, &p2) - d as f64 + logdet(&e2) - logdet(&e1));
    Ok(kl.max(0.0))
}

/// What [`score_dataset`] computes from the deltas.
#[derive(Debug, Clone, PartialEq)]
pub enum Measure {
    /// Empirical F-SI from validation prediction deltas.
    Fsi { sigma: f64 },
    /// Smooth SI from weight deltas.
    Si(SmoothingSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureTag {
    Si,
    Fsi,
}

impl Measure {
    pub fn tag(&self) -> MeasureTag {
        match self {
            Measure::Fsi { .. } => MeasureTag::Fsi,
            Measure::Si(_) => MeasureTag::Si,
        }
    }
}

/// One score per sample, with ranks (ascending score, ties broken by index).
pub fn score_dataset(deltas: &LooDeltas, measure: &Measure) -> Result<ScoreReport> {
    let scores = match measure {
        Measure::Fsi { sigma } => {
            let preds = deltas.predictions.as_ref().ok_or_else(|| {
                Error::InvalidArgument("F-SI needs validation prediction deltas".into())
            })?;
            fsi_empirical(preds, *sigma, deltas.n_val)?
        }
        Measure::Si(spec) => {
            let w = deltas
                .weights
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("SI needs weight deltas".into()))?;
            let precision = spec.precision()?;
            (0..w.nrows())
                .map(|i| Ok(0.5 * precision.quad(&w.row(i).transpose())?))
                .collect::<Result<Vec<_>>>()?
        }
    };
    if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Singular(format!("non-finite score for sample {bad}")));
    }
    let config = serde_json::json!({
        "train": deltas.config,
        "measure": measure.tag(),
        "n_val": deltas.n_val,
        "sigma": match measure { Measure::Fsi { sigma } => Some(*sigma), Measure::Si(_) => None },
    });
    Ok(ScoreReport::new(measure.tag(), scores, config))
}
