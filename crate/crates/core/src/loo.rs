//! Leave-one-out deltas without retraining.
//!
//! For each sample `i` the trained model on `S₋ᵢ` is expressed through dual
//! coefficients on the remaining rows. With `β = Mₜr − pad_i(Mₜ⁽⁻ⁱ⁾r₋ᵢ)`,
//! the weight delta is `∇f₀(X)β` and the validation prediction delta is
//! `Θ₀(X_val, X)β`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dynamics::{matfun_eigen, TrainConfig, Trajectory};
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{self, keep_indices, select, select_rows, SymEigen};

/// Inverse of the principal minor of `matrix` that remains after deleting the
/// rows/columns of `block` (each block has `k` rows), given `inv = matrix⁻¹`.
///
/// The deleted block is treated as the trailing block of a symmetric
/// permutation, then
/// `A₁₁⁻¹ = F₁₁⁻¹ − F₁₁⁻¹A₁₂(A₂₂ + A₂₁F₁₁⁻¹A₁₂)⁻¹A₂₁F₁₁⁻¹`,
/// where `F₁₁⁻¹` is the kept-kept block of `inv`. Costs O(n²k³).
pub fn downdate_inverse(
    inv: &DMatrix<f64>,
    matrix: &DMatrix<f64>,
    block: usize,
    k: usize,
) -> Result<DMatrix<f64>> {
    ensure_dim(k > 0 && inv.is_square() && inv.shape() == matrix.shape(), || {
        format!("inverse {:?} and matrix {:?} with k = {k}", inv.shape(), matrix.shape())
    })?;
    let total = inv.nrows();
    ensure_dim(total % k == 0 && block < total / k, || {
        format!("block {block} out of range for {} samples", total / k)
    })?;
    let drop: Vec<usize> = (block * k..(block + 1) * k).collect();
    downdate_inverse_rows(inv, matrix, &drop)
}

/// Leave-several-out form of [`downdate_inverse`] for an arbitrary row set.
pub(crate) fn downdate_inverse_rows(
    inv: &DMatrix<f64>,
    matrix: &DMatrix<f64>,
    drop: &[usize],
) -> Result<DMatrix<f64>> {
    let total = inv.nrows();
    let keep: Vec<usize> = (0..total).filter(|r| !drop.contains(r)).collect();
    let f11_inv = select(inv, &keep, &keep);
    let a12 = select(matrix, &keep, drop);
    let a21 = select(matrix, drop, &keep);
    let a22 = select(matrix, drop, drop);
    let left = &f11_inv * &a12;
    let right = &a21 * &f11_inv;
    let schur = a22 + &a21 * &left;
    let cond_ok = schur.iter().all(|v| v.is_finite());
    let solved = if cond_ok {
        schur
            .clone()
            .lu()
            .solve(&right)
            .filter(|s| s.iter().all(|v| v.is_finite()))
    } else {
        None
    };
    let solved = solved.ok_or_else(|| {
        Error::Singular(format!("Schur complement of the removed rows {drop:?} is singular"))
    })?;
    let mut out = f11_inv - left * solved;
    linalg::symmetrize_mut(&mut out);
    Ok(out)
}

/// Per-sample leave-one-out deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct LooDeltas {
    /// Row i: w − w₋ᵢ, in store coordinates.
    pub weights: Option<DMatrix<f64>>,
    /// Row i: f_w(X_val) − f_{w₋ᵢ}(X_val), flattened sample-major.
    pub predictions: Option<DMatrix<f64>>,
    pub n_val: usize,
    pub config: TrainConfig,
    pub elapsed_secs: f64,
}

impl LooDeltas {
    pub fn n(&self) -> usize {
        self.weights
            .as_ref()
            .or(self.predictions.as_ref())
            .map_or(0, |m| m.nrows())
    }

    /// Multiplies every delta by `c`.
    pub fn scaled(&self, c: f64) -> LooDeltas {
        LooDeltas {
            weights: self.weights.as_ref().map(|m| m * c),
            predictions: self.predictions.as_ref().map(|m| m * c),
            ..self.clone()
        }
    }
}

fn clamp_psd(eigen: &mut SymEigen) {
    for v in eigen.values.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// β for sample `i`: `Mₜr − pad_i(Mₜ⁽⁻ⁱ⁾ r₋ᵢ)`.
pub fn loo_dual_delta(i: usize, traj: &Trajectory<'_>) -> Result<DVector<f64>> {
    let kernel = traj.kernel();
    let n = kernel.n();
    let k = kernel.k();
    if n < 2 {
        return Err(Error::InvalidArgument("leave-one-out needs at least two samples".into()));
    }
    if i >= n {
        return Err(Error::InvalidArgument(format!("sample index {i} out of range for n = {n}")));
    }
    let config = traj.config();
    let keep = keep_indices(n * k, i, k);
    let r_minus = select_rows(traj.residual(), &keep);
    let alpha_minus = if config.time.is_infinite() {
        let inv_minor = if kernel.lambda() == config.lambda {
            downdate_inverse(kernel.inverse()?, &kernel.regularized(), i, k)?
        } else {
            let mut reg = kernel.matrix().clone();
            for d in 0..reg.nrows() {
                reg[(d, d)] += config.lambda;
            }
            let inv = linalg::spd_inverse(&reg)
                .map_err(|_| Error::Singular("Θ₀ + λI is singular".into()))?;
            downdate_inverse(&inv, &reg, i, k)?
        };
        inv_minor * r_minus
    } else {
        let minor = select(kernel.matrix(), &keep, &keep);
        let mut eigen = SymEigen::new(&minor);
        clamp_psd(&mut eigen);
        matfun_eigen(&eigen, config.eta_t(), config.lambda)? * r_minus
    };
    let mut beta = traj.dual().clone();
    for (pos, &row) in keep.iter().enumerate() {
        beta[row] -= alpha_minus[pos];
    }
    Ok(beta)
}

/// w − w₋ᵢ
pub fn loo_weight_delta(i: usize, traj: &Trajectory<'_>) -> Result<DVector<f64>> {
    let beta = loo_dual_delta(i, traj)?;
    Ok(traj.store().jacobian().tr_mul(&beta))
}

/// f_w(X_val) − f_{w₋ᵢ}(X_val), computed in function space only.
pub fn loo_prediction_delta(i: usize, traj: &Trajectory<'_>, val_cross: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_cross(traj, val_cross)?;
    let beta = loo_dual_delta(i, traj)?;
    Ok(val_cross * beta)
}

fn check_cross(traj: &Trajectory<'_>, val_cross: &DMatrix<f64>) -> Result<()> {
    let k = traj.kernel().k();
    ensure_dim(val_cross.ncols() == traj.kernel().dim() && val_cross.nrows() % k == 0, || {
        format!(
            "validation cross kernel is {}x{}, kernel has {} rows and k = {k}",
            val_cross.nrows(),
            val_cross.ncols(),
            traj.kernel().dim()
        )
    })
}

/// Deltas for every sample, computed in parallel. Row order follows sample
/// order regardless of scheduling.
pub fn loo_all(
    traj: &Trajectory<'_>,
    val_cross: Option<&DMatrix<f64>>,
    want_weights: bool,
) -> Result<LooDeltas> {
    let start = Instant::now();
    if let Some(c) = val_cross {
        check_cross(traj, c)?;
    }
    let n = traj.kernel().n();
    if n < 2 {
        return Err(Error::InvalidArgument("leave-one-out needs at least two samples".into()));
    }
    let results: Vec<Result<DVector<f64>>> = (0..n).into_par_iter().map(|i| loo_dual_delta(i, traj)).collect();
    let failures: Vec<(usize, String)> = results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().err().map(|e| (i, e.to_string())))
        .collect();
    if !failures.is_empty() {
        return Err(Error::LooFailures(failures));
    }
    let betas: Vec<DVector<f64>> = results.into_iter().map(|r| r.expect("checked")).collect();
    let g = traj.store().jacobian();
    let weights = want_weights.then(|| {
        let mut m = DMatrix::zeros(n, g.ncols());
        for (i, b) in betas.iter().enumerate() {
            m.row_mut(i).copy_from(&g.tr_mul(b).transpose());
        }
        m
    });
    let predictions = val_cross.map(|c| {
        let mut m = DMatrix::zeros(n, c.nrows());
        for (i, b) in betas.iter().enumerate() {
            m.row_mut(i).copy_from(&(c * b).transpose());
        }
        m
    });
    Ok(LooDeltas {
        weights,
        predictions,
        n_val: val_cross.map_or(0, |c| c.nrows() / traj.kernel().k()),
        config: *traj.config(),
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}
