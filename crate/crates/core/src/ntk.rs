//! Empirical NTK Gram matrices and per-layer Jacobian sketching.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, Error, Result};
use crate::ingest::{JacobianStore, LayerSketch};
use crate::linalg::{self, sample_without_replacement, SplitMix64, SymEigen};

/// Seed for layer `layer` of a sketch drawn with master seed `seed`.
///
/// The first SplitMix64 output for state `seed + layer`. Kept indices are then
/// `sample_without_replacement(d_layer, d0_layer, layer_seed)`.
pub fn layer_seed(seed: u64, layer: usize) -> u64 {
    SplitMix64::new(seed.wrapping_add(layer as u64)).next_u64()
}

/// Keeps `d0_per_layer` uniformly chosen coordinates of every layer and
/// rescales them by `sqrt(d_layer / d0_layer)`, so that sketched dot products
/// are unbiased estimates of the exact ones.
pub fn sketch(store: &JacobianStore, d0_per_layer: usize, seed: u64) -> Result<JacobianStore> {
    if let Some(l) = store.layers().iter().find(|l| d0_per_layer > l.d0()) {
        return Err(Error::InvalidArgument(format!(
            "d0 = {d0_per_layer} exceeds the {} available coordinates of layer '{}'",
            l.d0(),
            l.name
        )));
    }
    sketch_with(store, |_| d0_per_layer, seed)
}

/// Like [`sketch`], but layers smaller than `d0_per_layer` are kept whole.
pub fn sketch_capped(store: &JacobianStore, d0_per_layer: usize, seed: u64) -> Result<JacobianStore> {
    sketch_with(store, |l| d0_per_layer.min(l.d0()), seed)
}

/// Keeps `ceil(fraction · d_layer)` coordinates of each layer.
pub fn sketch_fraction(store: &JacobianStore, fraction: f64, seed: u64) -> Result<JacobianStore> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("sketch fraction {fraction} outside (0, 1]")));
    }
    sketch_with(
        store,
        |l| ((fraction * l.d_layer as f64).ceil() as usize).clamp(1, l.d0()),
        seed,
    )
}

fn sketch_with(
    store: &JacobianStore,
    size: impl Fn(&LayerSketch) -> usize,
    seed: u64,
) -> Result<JacobianStore> {
    let mut layers = Vec::with_capacity(store.layers().len());
    let mut columns: Vec<(usize, f64)> = Vec::new();
    let mut offset = 0;
    let mut changed = false;
    for (li, layer) in store.layers().iter().enumerate() {
        let target = size(layer);
        if target == 0 {
            return Err(Error::InvalidArgument(format!("layer '{}' would keep no coordinates", layer.name)));
        }
        if target == layer.d0() {
            columns.extend((0..layer.d0()).map(|c| (offset + c, 1.0)));
            layers.push(layer.clone());
        } else {
            changed = true;
            let lseed = layer_seed(seed, li);
            let positions = sample_without_replacement(layer.d0(), target, lseed);
            let rescale = (layer.d0() as f64 / target as f64).sqrt();
            columns.extend(positions.iter().map(|&p| (offset + p, rescale)));
            layers.push(LayerSketch {
                name: layer.name.clone(),
                d_layer: layer.d_layer,
                kept: positions.iter().map(|&p| layer.kept[p]).collect(),
                seed: lseed,
            });
        }
        offset += layer.d0();
    }
    if !changed {
        return Ok(store.clone());
    }
    let src = store.jacobian();
    let jac = DMatrix::from_fn(src.nrows(), columns.len(), |r, c| {
        let (col, s) = columns[c];
        src[(r, col)] * s
    });
    Ok(store.with_columns(layers, jac, seed))
}

/// The `nk × nk` NTK Θ₀ = ∇f₀(X)ᵀ∇f₀(X) with its eigendecomposition.
#[derive(Debug, Clone)]
pub struct Kernel {
    theta: DMatrix<f64>,
    eigen: SymEigen,
    lambda: f64,
    k: usize,
    inverse: Option<DMatrix<f64>>,
}

impl Kernel {
    pub fn build(store: &JacobianStore, lambda: f64) -> Result<Self> {
        let g = store.jacobian();
        let theta = g * g.transpose();
        Kernel::from_matrix(theta, store.k(), lambda)
    }

    /// Wraps an arbitrary symmetric PSD matrix with `k` rows per sample.
    pub fn from_matrix(theta: DMatrix<f64>, k: usize, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("regularizer λ = {lambda} must be finite and ≥ 0")));
        }
        ensure_dim(theta.is_square() && k > 0 && theta.nrows() % k == 0, || {
            format!("kernel of shape {}x{} with k = {k}", theta.nrows(), theta.ncols())
        })?;
        let scale = linalg::max_abs(&theta);
        let asym = linalg::max_abs(&(&theta - theta.transpose()));
        if asym > 1e-10 * scale {
            return Err(Error::InvalidArgument(format!("kernel is not symmetric (asymmetry {asym:e})")));
        }
        let theta = linalg::symmetrize(&theta);
        let mut eigen = SymEigen::new(&theta);
        let max = eigen.max_abs();
        for v in eigen.values.iter_mut() {
            if *v < 0.0 {
                if *v < -1e-8 * max {
                    return Err(Error::NegativeEigenvalue { value: *v, max });
                }
                *v = 0.0;
            }
        }
        let min_shifted = eigen.values.get(0).copied().unwrap_or(0.0) + lambda;
        let inverse = (min_shifted > 1e-12 * (max + lambda)).then(|| eigen.map(|v| 1.0 / (v + lambda)));
        Ok(Kernel {
            theta,
            eigen,
            lambda,
            k,
            inverse,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn eigen(&self) -> &SymEigen {
        &self.eigen
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.theta.nrows() / self.k
    }

    pub fn dim(&self) -> usize {
        self.theta.nrows()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigen.values.iter().copied().fold(0.0, f64::max)
    }

    /// Θ₀ + λI
    pub fn regularized(&self) -> DMatrix<f64> {
        let mut m = self.theta.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += self.lambda;
        }
        m
    }

    /// Cached (Θ₀ + λI)⁻¹; fails when λ = 0 and Θ₀ is singular.
    pub fn inverse(&self) -> Result<&DMatrix<f64>> {
        self.inverse.as_ref().ok_or_else(|| {
            Error::Singular(format!(
                "Θ₀ + λI with λ = {} has smallest eigenvalue {:e}",
                self.lambda,
                self.eigen.values[0] + self.lambda
            ))
        })
    }

    /// Rows/columns of sample `i`.
    pub fn block(&self, i: usize) -> std::ops::Range<usize> {
        i * self.k..(i + 1) * self.k
    }

    /// vᵀ Θ₀ v
    pub fn quadratic_form(&self, v: &DVector<f64>) -> f64 {
        linalg::quad_form(v, &self.theta)
    }
}

/// Θ₀(X_test, X_train) = ∇f₀(X_test)ᵀ ∇f₀(X_train), shape `mk × nk`.
pub fn cross_kernel(test: &JacobianStore, train: &JacobianStore) -> Result<DMatrix<f64>> {
    if !test.same_coordinates(train) {
        return Err(Error::InvalidArgument(
            "stores were sketched with different layers or kept indices".into(),
        ));
    }
    ensure_dim(test.k() == train.k(), || {
        format!("output dimensions differ: {} vs {}", test.k(), train.k())
    })?;
    Ok(test.jacobian() * train.jacobian().transpose())
}
