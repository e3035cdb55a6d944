//! Differentiable toy models with exact per-example Jacobians.
//!
//! Two architectures are supported: a bias-free linear map `f(x) = W x` and a
//! one-hidden-layer ReLU MLP `f(x) = W₂ relu(W₁ x + b₁) + b₂`. Weights live in
//! a single flat vector; [`Model::layers`] describes how it is partitioned.
//!
//! The ReLU derivative at exactly zero is taken to be 0.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Linear { input: usize, outputs: usize },
    Mlp { input: usize, hidden: usize, outputs: usize },
}

impl ModelSpec {
    pub fn input_dim(&self) -> usize {
        match *self {
            ModelSpec::Linear { input, .. } | ModelSpec::Mlp { input, .. } => input,
        }
    }

    pub fn outputs(&self) -> usize {
        match *self {
            ModelSpec::Linear { outputs, .. } | ModelSpec::Mlp { outputs, .. } => outputs,
        }
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        match *self {
            ModelSpec::Linear { input, outputs } => vec![LayerShape::new("weight", input * outputs)],
            ModelSpec::Mlp {
                input,
                hidden,
                outputs,
            } => vec![
                LayerShape::new("hidden.weight", hidden * input),
                LayerShape::new("hidden.bias", hidden),
                LayerShape::new("output.weight", outputs * hidden),
                LayerShape::new("output.bias", outputs),
            ],
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.size).sum()
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ModelSpec::Linear { input, outputs } => input > 0 && outputs > 0,
            ModelSpec::Mlp {
                input,
                hidden,
                outputs,
            } => input > 0 && hidden > 0 && outputs > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "model dimensions must be positive: {self:?}"
            )))
        }
    }
}

impl std::str::FromStr for ModelSpec {
    type Err = Error;

    /// Parses `linear:IN:OUT` or `mlp:IN:HIDDEN:OUT`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| {
            p.parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad model dimension '{p}' in '{s}'")))
        };
        let spec = match parts.as_slice() {
            ["linear", i, o] => ModelSpec::Linear {
                input: num(i)?,
                outputs: num(o)?,
            },
            ["mlp", i, h, o] => ModelSpec::Mlp {
                input: num(i)?,
                hidden: num(h)?,
                outputs: num(o)?,
            },
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unrecognised model spec '{s}' (expected linear:IN:OUT or mlp:IN:HIDDEN:OUT)"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub size: usize,
}

impl LayerShape {
    fn new(name: &str, size: usize) -> Self {
        LayerShape {
            name: name.to_string(),
            size,
        }
    }
}

/// An immutable model: architecture plus the initial weights `w₀`.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    init: DVector<f64>,
}

/// Builds a model with deterministic initial weights.
///
/// Linear weights are drawn from N(0, 1/input). MLP hidden weights use He
/// scaling, N(0, 2/input); hidden biases and the whole output layer start at
/// zero, so a fresh MLP outputs exactly 0.
pub fn init_model(spec: ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = DVector::zeros(spec.num_params());
    match spec {
        ModelSpec::Linear { input, .. } => {
            let dist = Normal::new(0.0, (1.0 / input as f64).sqrt()).expect("finite std");
            init.iter_mut().for_each(|w| *w = dist.sample(&mut rng));
        }
        ModelSpec::Mlp { input, hidden, .. } => {
            let dist = Normal::new(0.0, (2.0 / input as f64).sqrt()).expect("finite std");
            init.rows_mut(0, hidden * input)
                .iter_mut()
                .for_each(|w| *w = dist.sample(&mut rng));
        }
    }
    Ok(Model { spec, init })
}

impl Model {
    pub fn from_parts(spec: ModelSpec, init: DVector<f64>) -> Result<Self> {
        spec.validate()?;
        ensure_dim(init.len() == spec.num_params(), || {
            format!("{} weights for a model with {} parameters", init.len(), spec.num_params())
        })?;
        Ok(Model { spec, init })
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn init_weights(&self) -> &DVector<f64> {
        &self.init
    }

    pub fn num_params(&self) -> usize {
        self.init.len()
    }

    pub fn outputs(&self) -> usize {
        self.spec.outputs()
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        self.spec.layers()
    }

    fn check(&self, w: &DVector<f64>, x: &[f64]) -> Result<()> {
        ensure_dim(w.len() == self.num_params(), || {
            format!("weight vector has length {}, model has {} parameters", w.len(), self.num_params())
        })?;
        ensure_dim(x.len() == self.input_dim(), || {
            format!("input has length {}, model expects {}", x.len(), self.input_dim())
        })
    }

    pub fn forward(&self, w: &DVector<f64>, x: &[f64]) -> Result<DVector<f64>> {
        self.check(w, x)?;
        Ok(match self.spec {
            ModelSpec::Linear { input, outputs } => DVector::from_fn(outputs, |o, _| {
                (0..input).map(|i| w[o * input + i] * x[i]).sum()
            }),
            ModelSpec::Mlp { .. } => self.mlp_pass(w, x).output,
        })
    }

    /// Exact `k × d` Jacobian of [`Model::forward`] with respect to the weights.
    pub fn jacobian(&self, w: &DVector<f64>, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check(w, x)?;
        let d = self.num_params();
        Ok(match self.spec {
            ModelSpec::Linear { input, outputs } => {
                let mut jac = DMatrix::zeros(outputs, d);
                for o in 0..outputs {
                    for i in 0..input {
                        jac[(o, o * input + i)] = x[i];
                    }
                }
                jac
            }
            ModelSpec::Mlp {
                input,
                hidden,
                outputs,
            } => {
                let pass = self.mlp_pass(w, x);
                let (w1_len, b1_off, w2_off, b2_off) = mlp_offsets(input, hidden, outputs);
                let mut jac = DMatrix::zeros(outputs, d);
                for o in 0..outputs {
                    for j in 0..hidden {
                        let back = if pass.pre[j] > 0.0 { w[w2_off + o * hidden + j] } else { 0.0 };
                        if back != 0.0 {
                            for i in 0..input {
                                jac[(o, j * input + i)] = back * x[i];
                            }
                        }
                        jac[(o, b1_off + j)] = back;
                        jac[(o, w2_off + o * hidden + j)] = pass.act[j];
                    }
                    jac[(o, b2_off + o)] = 1.0;
                }
                debug_assert_eq!(w1_len, hidden * input);
                jac
            }
        })
    }

    /// `J(x)ᵀ v` without forming the Jacobian.
    pub fn vjp(&self, w: &DVector<f64>, x: &[f64], v: &[f64], out: &mut DVector<f64>) -> Result<()> {
        self.check(w, x)?;
        ensure_dim(v.len() == self.outputs() && out.len() == self.num_params(), || {
            "vjp cotangent/output length mismatch".to_string()
        })?;
        match self.spec {
            ModelSpec::Linear { input, outputs } => {
                for o in 0..outputs {
                    for i in 0..input {
                        out[o * input + i] += v[o] * x[i];
                    }
                }
            }
            ModelSpec::Mlp {
                input,
                hidden,
                outputs,
            } => {
                let pass = self.mlp_pass(w, x);
                let (_, b1_off, w2_off, b2_off) = mlp_offsets(input, hidden, outputs);
                for j in 0..hidden {
                    let mut back = 0.0;
                    for o in 0..outputs {
                        out[w2_off + o * hidden + j] += v[o] * pass.act[j];
                        back += v[o] * w[w2_off + o * hidden + j];
                    }
                    if pass.pre[j] > 0.0 && back != 0.0 {
                        out[b1_off + j] += back;
                        let row = &mut out.as_mut_slice()[j * input..(j + 1) * input];
                        for (r, xi) in row.iter_mut().zip(x) {
                            *r += back * xi;
                        }
                    }
                }
                for o in 0..outputs {
                    out[b2_off + o] += v[o];
                }
            }
        }
        Ok(())
    }

    /// First-order Taylor expansion around `w₀`: `f₀(x) + J₀(x)(w − w₀)`.
    pub fn linearized_forward(&self, w: &DVector<f64>, x: &[f64]) -> Result<DVector<f64>> {
        self.check(w, x)?;
        let f0 = self.forward(&self.init, x)?;
        let j0 = self.jacobian(&self.init, x)?;
        Ok(f0 + j0 * (w - &self.init))
    }

    /// Squared loss `½ Σᵢ ‖f_w(xᵢ) − yᵢ‖²` and its gradient over a whole
    /// batch, with `inputs` as `n × input` and `targets` as `n × outputs`.
    pub fn batch_loss_gradient(
        &self,
        w: &DVector<f64>,
        inputs: &DMatrix<f64>,
        targets: &DMatrix<f64>,
    ) -> Result<(f64, DVector<f64>)> {
        ensure_dim(w.len() == self.num_params(), || {
            format!("weight vector has length {}, model has {} parameters", w.len(), self.num_params())
        })?;
        ensure_dim(
            inputs.ncols() == self.input_dim() && targets.shape() == (inputs.nrows(), self.outputs()),
            || "batch inputs/targets do not match the model".to_string(),
        )?;
        let mut grad = DVector::zeros(self.num_params());
        let loss = match self.spec {
            ModelSpec::Linear { input, outputs } => {
                let wm = DMatrix::from_row_slice(outputs, input, w.as_slice());
                let residual = inputs * wm.transpose() - targets;
                let g = residual.tr_mul(inputs);
                copy_row_major(&g, &mut grad, 0);
                0.5 * residual.norm_squared()
            }
            ModelSpec::Mlp {
                input,
                hidden,
                outputs,
            } => {
                let (w1_len, b1_off, w2_off, b2_off) = mlp_offsets(input, hidden, outputs);
                let w1 = DMatrix::from_row_slice(hidden, input, &w.as_slice()[..w1_len]);
                let b1 = w.rows(b1_off, hidden);
                let w2 = DMatrix::from_row_slice(outputs, hidden, &w.as_slice()[w2_off..b2_off]);
                let b2 = w.rows(b2_off, outputs);
                let mut pre = inputs * w1.transpose();
                for mut row in pre.row_iter_mut() {
                    row += b1.transpose();
                }
                let act = pre.map(|v| v.max(0.0));
                let mut residual = &act * w2.transpose() - targets;
                for mut row in residual.row_iter_mut() {
                    row += b2.transpose();
                }
                copy_row_major(&residual.tr_mul(&act), &mut grad, w2_off);
                grad.rows_mut(b2_off, outputs).copy_from(&residual.row_sum().transpose());
                let mut back = &residual * &w2;
                back.zip_apply(&pre, |b, p| {
                    if p <= 0.0 {
                        *b = 0.0
                    }
                });
                copy_row_major(&back.tr_mul(inputs), &mut grad, 0);
                grad.rows_mut(b1_off, hidden).copy_from(&back.row_sum().transpose());
                0.5 * residual.norm_squared()
            }
        };
        Ok((loss, grad))
    }

    fn mlp_pass(&self, w: &DVector<f64>, x: &[f64]) -> MlpPass {
        let ModelSpec::Mlp {
            input,
            hidden,
            outputs,
        } = self.spec
        else {
            unreachable!("mlp_pass on a linear model")
        };
        let (_, b1_off, w2_off, b2_off) = mlp_offsets(input, hidden, outputs);
        let ws = w.as_slice();
        let pre: Vec<f64> = (0..hidden)
            .map(|j| {
                let row = &ws[j * input..(j + 1) * input];
                row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + ws[b1_off + j]
            })
            .collect();
        let act: Vec<f64> = pre.iter().map(|&p| p.max(0.0)).collect();
        let output = DVector::from_fn(outputs, |o, _| {
            let row = &ws[w2_off + o * hidden..w2_off + (o + 1) * hidden];
            row.iter().zip(&act).map(|(a, b)| a * b).sum::<f64>() + ws[b2_off + o]
        });
        MlpPass { pre, act, output }
    }
}

struct MlpPass {
    pre: Vec<f64>,
    act: Vec<f64>,
    output: DVector<f64>,
}

fn copy_row_major(m: &DMatrix<f64>, out: &mut DVector<f64>, offset: usize) {
    let cols = m.ncols();
    for r in 0..m.nrows() {
        for c in 0..cols {
            out[offset + r * cols + c] = m[(r, c)];
        }
    }
}

fn mlp_offsets(input: usize, hidden: usize, outputs: usize) -> (usize, usize, usize, usize) {
    let w1 = hidden * input;
    let b1 = w1;
    let w2 = b1 + hidden;
    let b2 = w2 + outputs * hidden;
    (w1, b1, w2, b2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp(input: usize, hidden: usize, outputs: usize, seed: u64) -> Model {
        init_model(ModelSpec::Mlp { input, hidden, outputs }, seed).unwrap()
    }

    /// Perturbs every weight so the output layer is non-zero.
    fn perturbed(model: &Model, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 0.3).unwrap();
        model.init_weights().map(|w| w + n.sample(&mut rng))
    }

    #[test]
    fn parameter_counts() {
        let lin = init_model(ModelSpec::Linear { input: 4, outputs: 1 }, 0).unwrap();
        assert_eq!(lin.num_params(), 4);
        let m = mlp(2, 8, 1, 0);
        assert_eq!(m.num_params(), 2 * 8 + 8 + 8 + 1);
        assert_eq!(m.num_params(), 33);
    }

    #[test]
    fn init_is_deterministic() {
        let a = mlp(3, 16, 2, 7);
        let b = mlp(3, 16, 2, 7);
        assert_eq!(a.init_weights().as_slice(), b.init_weights().as_slice());
        let c = mlp(3, 16, 2, 8);
        assert_ne!(a.init_weights().as_slice(), c.init_weights().as_slice());
    }

    #[test]
    fn invalid_spec_rejected() {
        assert!(init_model(ModelSpec::Mlp { input: 0, hidden: 3, outputs: 1 }, 0).is_err());
        assert!("mlp:2:0:1".parse::<ModelSpec>().is_err());
        assert!("conv:2".parse::<ModelSpec>().is_err());
        assert_eq!(
            "mlp:2:8:1".parse::<ModelSpec>().unwrap(),
            ModelSpec::Mlp { input: 2, hidden: 8, outputs: 1 }
        );
    }

    #[test]
    fn fresh_mlp_outputs_zero() {
        let m = mlp(3, 10, 2, 1);
        let f = m.forward(m.init_weights(), &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(f, DVector::zeros(2));
    }

    #[test]
    fn linear_forward_identity() {
        let m = Model::from_parts(
            ModelSpec::Linear { input: 2, outputs: 2 },
            DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0]),
        )
        .unwrap();
        let f = m.forward(m.init_weights(), &[3.0, -1.0]).unwrap();
        assert_eq!(f.as_slice(), &[3.0, -1.0]);
        let zero = DVector::zeros(4);
        assert_eq!(m.forward(&zero, &[3.0, -1.0]).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn linear_jacobian_is_kronecker() {
        let m = init_model(ModelSpec::Linear { input: 3, outputs: 2 }, 0).unwrap();
        let x = [1.0, 2.0, 3.0];
        let j = m.jacobian(m.init_weights(), &x).unwrap();
        let expected = DMatrix::from_row_slice(
            2,
            6,
            &[1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0],
        );
        assert_eq!(j, expected);
    }

    #[test]
    fn mlp_forward_matches_independent_arithmetic() {
        let m = mlp(3, 5, 2, 3);
        let w = perturbed(&m, 11);
        let x = [0.5, -0.2, 1.3];
        // Unpack by hand into matrices and recompute.
        let w1 = DMatrix::from_row_slice(5, 3, &w.as_slice()[0..15]);
        let b1 = DVector::from_row_slice(&w.as_slice()[15..20]);
        let w2 = DMatrix::from_row_slice(2, 5, &w.as_slice()[20..30]);
        let b2 = DVector::from_row_slice(&w.as_slice()[30..32]);
        let h = (&w1 * DVector::from_row_slice(&x) + b1).map(|v| if v > 0.0 { v } else { 0.0 });
        let expected = w2 * h + b2;
        let got = m.forward(&w, &x).unwrap();
        assert!((got - expected).amax() < 1e-12);
    }

    #[test]
    fn zero_input_zero_bias_kills_input_columns() {
        let m = mlp(3, 6, 1, 2);
        let mut w = perturbed(&m, 4);
        w.rows_mut(18, 6).fill(0.0);
        let j = m.jacobian(&w, &[0.0, 0.0, 0.0]).unwrap();
        assert!(j.columns(0, 18).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch() {
        let m = mlp(3, 4, 1, 0);
        assert!(matches!(m.forward(m.init_weights(), &[1.0]), Err(Error::Dimension(_))));
        assert!(matches!(m.jacobian(&DVector::zeros(3), &[1.0, 2.0, 3.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn batch_gradient_matches_per_sample_vjp() {
        for m in [mlp(4, 7, 3, 9), init_model(ModelSpec::Linear { input: 4, outputs: 3 }, 2).unwrap()] {
            let w = if matches!(m.spec(), ModelSpec::Mlp { .. }) { perturbed(&m, 3) } else { m.init_weights().clone() };
            let inputs = DMatrix::from_fn(5, 4, |i, j| ((i * 4 + j) as f64 * 0.37).sin());
            let targets = DMatrix::from_fn(5, 3, |i, j| ((i + 2 * j) as f64).cos());
            let (loss, grad) = m.batch_loss_gradient(&w, &inputs, &targets).unwrap();
            let mut expected = DVector::zeros(m.num_params());
            let mut expected_loss = 0.0;
            for i in 0..5 {
                let x: Vec<f64> = inputs.row(i).iter().copied().collect();
                let r = m.forward(&w, &x).unwrap() - targets.row(i).transpose();
                expected_loss += 0.5 * r.norm_squared();
                m.vjp(&w, &x, r.as_slice(), &mut expected).unwrap();
            }
            assert!((loss - expected_loss).abs() < 1e-12);
            assert!((grad - expected).amax() < 1e-12);
        }
    }

    #[test]
    fn vjp_matches_jacobian_transpose() {
        let m = mlp(4, 7, 3, 9);
        let w = perturbed(&m, 1);
        let x = [0.1, -0.4, 0.9, 1.2];
        let v = [0.3, -1.0, 2.0];
        let mut out = DVector::zeros(m.num_params());
        m.vjp(&w, &x, &v, &mut out).unwrap();
        let expected = m.jacobian(&w, &x).unwrap().transpose() * DVector::from_row_slice(&v);
        assert!((out - expected).amax() < 1e-12);
    }

    #[test]
    fn linearization_at_base_point_and_linear_models() {
        let m = mlp(2, 6, 1, 5);
        let x = [0.7, -0.3];
        assert_eq!(
            m.linearized_forward(m.init_weights(), &x).unwrap(),
            m.forward(m.init_weights(), &x).unwrap()
        );
        let lin = init_model(ModelSpec::Linear { input: 2, outputs: 2 }, 1).unwrap();
        let w = DVector::from_vec(vec![0.3, -2.0, 1.0, 4.0]);
        let a = lin.linearized_forward(&w, &x).unwrap();
        let b = lin.forward(&w, &x).unwrap();
        assert!((a - b).amax() < 1e-14);
    }

    #[test]
    fn taylor_remainder_is_second_order() {
        let m = mlp(3, 12, 2, 6);
        let base = perturbed(&m, 2);
        let shifted = Model::from_parts(m.spec(), base.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut dir = DVector::from_fn(m.num_params(), |_, _| n.sample(&mut rng));
        dir /= dir.norm();
        let w = &base + dir * 1e-4;
        let x = [0.4, 1.1, -0.8];
        let err = (shifted.linearized_forward(&w, &x).unwrap() - shifted.forward(&w, &x).unwrap()).amax();
        assert!(err < 1e-7, "remainder {err}");
    }
}
