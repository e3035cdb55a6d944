//! Datasets, Jacobian stores, and the boundary formats (CSV, JLF).

mod dataset;
mod jlf;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, FormatError, Result};
use crate::model::Model;

pub use dataset::{load_dataset, write_dataset};
pub use jlf::{decode_jacobians, encode_jacobians, read_jacobians, write_jacobians, JLF_MAGIC};

/// A labelled classification dataset with its regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub targets: DMatrix<f64>,
    pub groups: Option<Vec<String>>,
    /// Labels before noise injection, when known.
    pub true_labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::InvalidArgument("dataset must contain at least one sample".into()));
        }
        ensure_dim(inputs.nrows() == labels.len(), || {
            format!("{} input rows but {} labels", inputs.nrows(), labels.len())
        })?;
        let targets = encode_targets(&labels, classes)?;
        Ok(Dataset {
            inputs,
            labels,
            classes,
            targets,
            groups: None,
            true_labels: None,
        })
    }

    pub fn with_groups(mut self, groups: Vec<String>) -> Result<Self> {
        ensure_dim(groups.len() == self.len(), || {
            format!("{} group tags for {} samples", groups.len(), self.len())
        })?;
        self.groups = Some(groups);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Output dimension `k` of the target encoding.
    pub fn outputs(&self) -> usize {
        self.targets.ncols()
    }

    pub fn input(&self, i: usize) -> Vec<f64> {
        self.inputs.row(i).iter().copied().collect()
    }

    /// Targets flattened sample-major, output-minor.
    pub fn target_vector(&self) -> DVector<f64> {
        flatten_rows(&self.targets)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: DMatrix::from_fn(idx.len(), self.input_dim(), |r, c| self.inputs[(idx[r], c)]),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            targets: DMatrix::from_fn(idx.len(), self.outputs(), |r, c| self.targets[(idx[r], c)]),
            groups: self.groups.as_ref().map(|g| idx.iter().map(|&i| g[i].clone()).collect()),
            true_labels: self.true_labels.as_ref().map(|t| idx.iter().map(|&i| t[i]).collect()),
        }
    }
}

/// Number of regression outputs used for `classes` classes.
pub fn outputs_for_classes(classes: usize) -> usize {
    if classes <= 2 {
        1
    } else {
        classes
    }
}

/// One-hot rows for three or more classes; a single ±1 column for binary tasks.
pub fn encode_targets(labels: &[usize], classes: usize) -> Result<DMatrix<f64>> {
    if classes == 0 {
        return Err(Error::InvalidArgument("number of classes must be positive".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes.max(2)) {
        return Err(Error::LabelOutOfRange {
            label: bad as i64,
            classes,
        });
    }
    let k = outputs_for_classes(classes);
    let mut out = DMatrix::zeros(labels.len(), k);
    for (i, &l) in labels.iter().enumerate() {
        if k == 1 {
            out[(i, 0)] = if l == 1 { 1.0 } else { -1.0 };
        } else {
            out[(i, l)] = 1.0;
        }
    }
    Ok(out)
}

/// Inverse of [`encode_targets`] for predictions: sign for k=1, argmax otherwise.
pub fn decode_prediction(pred: &[f64]) -> usize {
    if pred.len() == 1 {
        usize::from(pred[0] > 0.0)
    } else {
        pred.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseMask {
    pub flipped: Vec<bool>,
    pub original: Vec<usize>,
    pub seed: u64,
}

impl NoiseMask {
    pub fn count(&self) -> usize {
        self.flipped.iter().filter(|&&f| f).count()
    }
}

/// Flips exactly `round(rate·n)` labels, each to a uniformly drawn different class.
pub fn inject_label_noise(ds: &Dataset, rate: f64, seed: u64) -> Result<(Dataset, NoiseMask)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("noise rate {rate} outside [0, 1]")));
    }
    let n = ds.len();
    let count = (rate * n as f64).round() as usize;
    if count > 0 && ds.classes < 2 {
        return Err(Error::InvalidArgument(
            "label noise needs at least two classes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = ds.labels.clone();
    let mut flipped = vec![false; n];
    let mut chosen = sample(&mut rng, n, count).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let shift = rng.random_range(1..ds.classes);
        labels[i] = (labels[i] + shift) % ds.classes;
        flipped[i] = true;
    }
    let mut noisy = Dataset::new(ds.inputs.clone(), labels, ds.classes)?;
    noisy.groups = ds.groups.clone();
    noisy.true_labels = Some(ds.true_labels.clone().unwrap_or_else(|| ds.labels.clone()));
    let mask = NoiseMask {
        flipped,
        original: ds.labels.clone(),
        seed,
    };
    Ok((noisy, mask))
}

/// Per-layer sketch bookkeeping: which coordinates of the layer were kept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSketch {
    pub name: String,
    pub d_layer: usize,
    pub kept: Vec<u32>,
    /// Seed that generated `kept`; 0 for an unsketched layer.
    pub seed: u64,
}

impl LayerSketch {
    pub fn full(name: &str, d_layer: usize) -> Self {
        LayerSketch {
            name: name.to_string(),
            d_layer,
            kept: (0..d_layer as u32).collect(),
            seed: 0,
        }
    }

    pub fn d0(&self) -> usize {
        self.kept.len()
    }

    /// `sqrt(d_layer / d0_layer)`, already applied to the stored entries.
    pub fn scale(&self) -> f64 {
        (self.d_layer as f64 / self.d0() as f64).sqrt()
    }

    pub fn is_full(&self) -> bool {
        self.d0() == self.d_layer
    }

    pub(crate) fn validate(&self) -> std::result::Result<(), FormatError> {
        let bad = |reason: String| FormatError::Indices {
            layer: self.name.clone(),
            reason,
        };
        if self.kept.is_empty() {
            return Err(bad("no kept indices".into()));
        }
        if !self.kept.windows(2).all(|w| w[0] < w[1]) {
            return Err(bad("indices not strictly increasing".into()));
        }
        if let Some(&last) = self.kept.last() {
            if last as usize >= self.d_layer {
                return Err(bad(format!("index {last} outside layer of size {}", self.d_layer)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub source: String,
}

/// Per-example (optionally sketched) Jacobians at initialization plus `f₀(X)`.
///
/// Row `i·k + o` of `jac` is the gradient of output `o` on sample `i`; columns
/// are the kept coordinates of every layer, concatenated in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianStore {
    n: usize,
    k: usize,
    layers: Vec<LayerSketch>,
    jac: DMatrix<f64>,
    f0: DMatrix<f64>,
    pub provenance: Provenance,
}

impl JacobianStore {
    pub fn new(
        k: usize,
        layers: Vec<LayerSketch>,
        jac: DMatrix<f64>,
        f0: DMatrix<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("output dimension must be positive".into()));
        }
        let n = f0.nrows();
        ensure_dim(f0.ncols() == k, || format!("f0 has {} columns, expected k={k}", f0.ncols()))?;
        ensure_dim(jac.nrows() == n * k, || {
            format!("jacobian has {} rows, expected n·k = {}", jac.nrows(), n * k)
        })?;
        for layer in &layers {
            layer.validate()?;
        }
        let d0: usize = layers.iter().map(LayerSketch::d0).sum();
        ensure_dim(jac.ncols() == d0, || {
            format!("jacobian has {} columns, layer table keeps {d0}", jac.ncols())
        })?;
        Ok(JacobianStore {
            n,
            k,
            layers,
            jac,
            f0,
            provenance,
        })
    }

    /// Exact Jacobians of `model` at `w₀` for every row of `inputs`.
    pub fn from_model(model: &Model, inputs: &DMatrix<f64>, source: &str) -> Result<Self> {
        ensure_dim(inputs.ncols() == model.input_dim(), || {
            format!("inputs have {} features, model expects {}", inputs.ncols(), model.input_dim())
        })?;
        let n = inputs.nrows();
        let k = model.outputs();
        let d = model.num_params();
        let w0 = model.init_weights();
        let rows: Vec<(DMatrix<f64>, DVector<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x: Vec<f64> = inputs.row(i).iter().copied().collect();
                Ok((model.jacobian(w0, &x)?, model.forward(w0, &x)?))
            })
            .collect::<Result<_>>()?;
        let mut jac = DMatrix::zeros(n * k, d);
        let mut f0 = DMatrix::zeros(n, k);
        for (i, (j, f)) in rows.into_iter().enumerate() {
            jac.rows_mut(i * k, k).copy_from(&j);
            f0.row_mut(i).copy_from(&f.transpose());
        }
        let layers = model
            .layers()
            .iter()
            .map(|l| LayerSketch::full(&l.name, l.size))
            .collect();
        JacobianStore::new(
            k,
            layers,
            jac,
            f0,
            Provenance {
                seed: 0,
                source: source.to_string(),
            },
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Total number of kept coordinates.
    pub fn d0(&self) -> usize {
        self.jac.ncols()
    }

    pub fn layers(&self) -> &[LayerSketch] {
        &self.layers
    }

    /// Stacked Jacobian, `(n·k) × d0`.
    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.jac
    }

    /// Jacobian block of sample `i`, `k × d0`.
    pub fn sample_jacobian(&self, i: usize) -> DMatrix<f64> {
        self.jac.rows(i * self.k, self.k).into_owned()
    }

    pub fn f0(&self) -> &DMatrix<f64> {
        &self.f0
    }

    pub fn f0_vector(&self) -> DVector<f64> {
        flatten_rows(&self.f0)
    }

    pub fn is_sketched(&self) -> bool {
        !self.layers.iter().all(LayerSketch::is_full)
    }

    /// Whether both stores index the same coordinates (same layers, same kept sets).
    pub fn same_coordinates(&self, other: &JacobianStore) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.name == b.name && a.d_layer == b.d_layer && a.kept == b.kept)
    }

    pub fn subset(&self, idx: &[usize]) -> JacobianStore {
        let k = self.k;
        let rows: Vec<usize> = idx.iter().flat_map(|&i| (i * k)..(i * k + k)).collect();
        JacobianStore {
            n: idx.len(),
            k,
            layers: self.layers.clone(),
            jac: crate::linalg::select_matrix_rows(&self.jac, &rows),
            f0: crate::linalg::select_matrix_rows(&self.f0, idx),
            provenance: self.provenance.clone(),
        }
    }

    pub(crate) fn with_columns(&self, layers: Vec<LayerSketch>, jac: DMatrix<f64>, seed: u64) -> Self {
        JacobianStore {
            n: self.n,
            k: self.k,
            layers,
            jac,
            f0: self.f0.clone(),
            provenance: Provenance {
                seed,
                source: self.provenance.source.clone(),
            },
        }
    }
}

pub(crate) fn flatten_rows(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.len(), (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])))
}
