//! Brute-force references: closed-form ridge solutions and explicit
//! gradient-descent retraining, with and without each sample.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dynamics::TrainConfig;
use crate::error::{ensure_dim, Error, Result};
use crate::ingest::{flatten_rows, JacobianStore};
use crate::linalg::{spd_inverse, SymEigen};
use crate::loo::LooDeltas;
use crate::model::Model;

fn check_targets(store: &JacobianStore, targets: &DMatrix<f64>) -> Result<DVector<f64>> {
    ensure_dim(targets.shape() == (store.n(), store.k()), || {
        format!(
            "targets are {}x{}, store has n={}, k={}",
            targets.nrows(),
            targets.ncols(),
            store.n(),
            store.k()
        )
    })?;
    Ok(flatten_rows(targets) - store.f0_vector())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("ridge needs λ > 0, got {lambda}")))
    }
}

/// Ridge weight delta via the kernel: `Gᵀ(GGᵀ + λI)⁻¹ r`.
pub fn ridge_exact(store: &JacobianStore, targets: &DMatrix<f64>, lambda: f64) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    let r = check_targets(store, targets)?;
    let g = store.jacobian();
    let mut reg = g * g.transpose();
    for i in 0..reg.nrows() {
        reg[(i, i)] += lambda;
    }
    Ok(g.tr_mul(&(spd_inverse(&reg)? * r)))
}

/// Ridge weight delta in weight space: `(GᵀG + λI)⁻¹ Gᵀ r`.
pub fn ridge_primal(store: &JacobianStore, targets: &DMatrix<f64>, lambda: f64) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    let r = check_targets(store, targets)?;
    let g = store.jacobian();
    let mut reg = g.tr_mul(g);
    for i in 0..reg.nrows() {
        reg[(i, i)] += lambda;
    }
    Ok(spd_inverse(&reg)? * g.tr_mul(&r))
}

/// Largest eigenvalue of `GᵀG + λI`, through whichever Gram matrix is smaller.
pub fn curvature_max(store: &JacobianStore, lambda: f64) -> f64 {
    let g = store.jacobian();
    let gram = if g.nrows() <= g.ncols() { g * g.transpose() } else { g.tr_mul(g) };
    let top = if gram.nrows() == 0 { 0.0 } else { SymEigen::new(&gram).values[gram.nrows() - 1] };
    top.max(0.0) + lambda
}

/// `½‖G Δw − r‖² + (λ/2)‖Δw‖²`
pub fn linearized_loss(store: &JacobianStore, targets: &DMatrix<f64>, delta: &DVector<f64>, lambda: f64) -> Result<f64> {
    let r = check_targets(store, targets)?;
    ensure_dim(delta.len() == store.d0(), || "weight delta length".into())?;
    Ok(0.5 * (store.jacobian() * delta - r).norm_squared() + 0.5 * lambda * delta.norm_squared())
}

/// `{1, 2, 4, ...}` up to and including `max` (which is appended if not a power of two).
pub fn geometric_checkpoints(max: usize) -> Vec<usize> {
    let mut out: Vec<usize> = std::iter::successors(Some(1usize), |s| s.checked_mul(2))
        .take_while(|&s| s <= max)
        .collect();
    if max > 0 && out.last() != Some(&max) {
        out.push(max);
    }
    out
}

const DIVERGENCE_WINDOW: usize = 10;

/// Full-batch gradient descent on the linearized objective
/// `½‖f₀(X) + GΔw − Y‖² + (λ/2)‖Δw‖²` from `Δw = 0`. Returns `Δw` after
/// each of `checkpoints` steps, which must be nondecreasing.
pub fn train_gd(
    store: &JacobianStore,
    targets: &DMatrix<f64>,
    step: f64,
    checkpoints: &[usize],
    lambda: f64,
) -> Result<Vec<DVector<f64>>> {
    let r = check_targets(store, targets)?;
    if !(step > 0.0 && step.is_finite()) || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("step {step} and λ {lambda} must be positive / nonnegative")));
    }
    if checkpoints.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("checkpoints must be nondecreasing".into()));
    }
    let limit = 2.0 / curvature_max(store, lambda);
    if step >= limit {
        return Err(Error::Unstable(format!("step {step} exceeds 2/λ_max = {limit}")));
    }
    let g = store.jacobian();
    let mut delta = DVector::zeros(store.d0());
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut last_norm = f64::INFINITY;
    let mut growth = 0;
    let mut done = 0;
    for &target in checkpoints {
        while done < target {
            let grad = g.tr_mul(&(g * &delta - &r)) + &delta * lambda;
            let norm = grad.norm();
            if !norm.is_finite() {
                return Err(Error::Diverged { step: done });
            }
            growth = if norm > last_norm { growth + 1 } else { 0 };
            if growth >= DIVERGENCE_WINDOW {
                return Err(Error::Diverged { step: done });
            }
            last_norm = norm;
            delta.axpy(-step, &grad, 1.0);
            done += 1;
        }
        out.push(delta.clone());
    }
    Ok(out)
}

/// Gradient descent on the actual network with loss
/// `½ Σ‖f_w(xᵢ) − yᵢ‖² + (λ/2)‖w − w₀‖²`, from `w₀`. Returns the final weights.
pub fn train_gd_nonlinear(
    model: &Model,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    step: f64,
    steps: usize,
    lambda: f64,
) -> Result<DVector<f64>> {
    if !(step > 0.0 && step.is_finite()) || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("step {step} and λ {lambda} must be positive / nonnegative")));
    }
    let w0 = model.init_weights();
    let mut w = w0.clone();
    let mut last_loss = f64::INFINITY;
    let mut growth = 0;
    for s in 0..steps {
        let (loss, mut grad) = model.batch_loss_gradient(&w, inputs, targets)?;
        let diff = &w - w0;
        let loss = loss + 0.5 * lambda * diff.norm_squared();
        if !loss.is_finite() {
            return Err(Error::Diverged { step: s });
        }
        growth = if loss > last_loss { growth + 1 } else { 0 };
        if growth >= DIVERGENCE_WINDOW {
            return Err(Error::Diverged { step: s });
        }
        last_loss = loss;
        grad.axpy(lambda, &diff, 1.0);
        w.axpy(-step, &grad, 1.0);
    }
    Ok(w)
}

/// Step count and exact step size so that `steps · step = ηt`.
pub fn matched_steps(eta_t: f64, max_step: f64) -> Result<(usize, f64)> {
    if !(eta_t > 0.0 && eta_t.is_finite() && max_step > 0.0) {
        return Err(Error::InvalidArgument(format!("cannot match ηt = {eta_t} with step {max_step}")));
    }
    let steps = (eta_t / max_step).ceil() as usize;
    Ok((steps, eta_t / steps as f64))
}

/// Leave-one-out deltas by retraining on every `S₋ᵢ` from scratch: gradient
/// descent with matched `ηt` for finite time, primal ridge for `t = ∞`.
pub fn brute_loo(
    store: &JacobianStore,
    targets: &DMatrix<f64>,
    val_store: Option<&JacobianStore>,
    config: &TrainConfig,
    max_step: f64,
) -> Result<LooDeltas> {
    config.validate()?;
    let start = Instant::now();
    let n = store.n();
    if n < 2 {
        return Err(Error::InvalidArgument("leave-one-out needs at least two samples".into()));
    }
    check_targets(store, targets)?;
    if let Some(v) = val_store {
        ensure_dim(v.same_coordinates(store) && v.k() == store.k(), || {
            "validation store uses different coordinates".into()
        })?;
    }
    let schedule = if config.time.is_infinite() { None } else { Some(matched_steps(config.eta_t(), max_step)?) };
    let train = |s: &JacobianStore, t: &DMatrix<f64>| -> Result<DVector<f64>> {
        match schedule {
            None => ridge_primal(s, t, config.lambda),
            Some((steps, step)) => Ok(train_gd(s, t, step, &[steps], config.lambda)?.remove(0)),
        }
    };
    let full = train(store, targets)?;
    let deltas: Vec<Result<DVector<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let t = DMatrix::from_fn(n - 1, targets.ncols(), |r, c| targets[(keep[r], c)]);
            Ok(&full - train(&store.subset(&keep), &t)?)
        })
        .collect();
    let failures: Vec<(usize, String)> = deltas
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().err().map(|e| (i, e.to_string())))
        .collect();
    if !failures.is_empty() {
        return Err(Error::LooFailures(failures));
    }
    let mut weights = DMatrix::zeros(n, store.d0());
    for (i, d) in deltas.into_iter().enumerate() {
        weights.row_mut(i).copy_from(&d.expect("checked").transpose());
    }
    let predictions = val_store.map(|v| weights.clone() * v.jacobian().transpose());
    Ok(LooDeltas {
        weights: Some(weights),
        predictions,
        n_val: val_store.map_or(0, |v| v.n()),
        config: *config,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}
