//! End-to-end scoring on (subsets of) a training set: leave-one-out deltas,
//! scores, linearized retraining accuracy, and the summaries built on them.

use std::collections::BTreeMap;

use clap::ValueEnum;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{SmoothingMode, TrainConfig, Trajectory};
use crate::error::{ensure_dim, Error, Result};
use crate::info::{self, Measure, MeasureTag, ScoreReport, SmoothingSpec};
use crate::ingest::{decode_prediction, JacobianStore};
use crate::linalg::select_matrix_rows;
use crate::loo::loo_all;
use crate::ntk::{cross_kernel, Kernel};
use crate::sgdcov::{grad_noise, lyapunov_solve};

/// A training store with targets, plus the validation store used for F-SI
/// and accuracy.
#[derive(Debug, Clone)]
pub struct Problem {
    pub store: JacobianStore,
    pub targets: DMatrix<f64>,
    pub val_store: JacobianStore,
    pub val_labels: Vec<usize>,
    pub config: TrainConfig,
}

impl Problem {
    pub fn new(
        store: JacobianStore,
        targets: DMatrix<f64>,
        val_store: JacobianStore,
        val_labels: Vec<usize>,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        ensure_dim(targets.shape() == (store.n(), store.k()), || {
            format!("targets are {}x{}, store has n={}, k={}", targets.nrows(), targets.ncols(), store.n(), store.k())
        })?;
        ensure_dim(val_labels.len() == val_store.n(), || {
            format!("{} validation labels for {} validation samples", val_labels.len(), val_store.n())
        })?;
        if !val_store.same_coordinates(&store) || val_store.k() != store.k() {
            return Err(Error::InvalidArgument(
                "validation Jacobians use different coordinates than the training Jacobians".into(),
            ));
        }
        Ok(Problem {
            store,
            targets,
            val_store,
            val_labels,
            config,
        })
    }

    pub fn n(&self) -> usize {
        self.store.n()
    }

    pub fn all(&self) -> Vec<usize> {
        (0..self.n()).collect()
    }

    fn restrict(&self, idx: &[usize]) -> Result<(JacobianStore, DMatrix<f64>)> {
        if idx.is_empty() {
            return Err(Error::InvalidArgument("retained set is empty".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n()) {
            return Err(Error::InvalidArgument(format!("index {bad} out of range")));
        }
        Ok((self.store.subset(idx), select_matrix_rows(&self.targets, idx)))
    }

    /// Scores of the samples in `idx`, when training on exactly those samples.
    pub fn scores(&self, idx: &[usize], measure: MeasureTag) -> Result<ScoreReport> {
        let (sub, targets) = self.restrict(idx)?;
        let cfg = self.config;
        let kernel = Kernel::build(&sub, cfg.lambda)?;
        let traj = Trajectory::new(&kernel, &sub, &targets, cfg)?;
        let sigma2 = cfg.sigma * cfg.sigma;
        match measure {
            MeasureTag::Fsi => {
                let cross = cross_kernel(&self.val_store, &sub)?;
                let deltas = loo_all(&traj, Some(&cross), false)?;
                info::score_dataset(&deltas, &Measure::Fsi { sigma: cfg.sigma })
            }
            MeasureTag::Si => {
                let deltas = loo_all(&traj, None, true)?;
                let spec = match cfg.smoothing {
                    SmoothingMode::Identity => SmoothingSpec::Identity { sigma2 },
                    SmoothingMode::IsotropicSgd => SmoothingSpec::IsotropicSgd {
                        hessian: info::validation_hessian(&sub, cfg.lambda),
                        eta: cfg.eta,
                        batch: cfg.batch,
                        sigma2,
                    },
                    SmoothingMode::Fisher => SmoothingSpec::Fisher {
                        fisher: info::fisher(&self.val_store)?,
                        sigma2,
                    },
                    SmoothingMode::Lyapunov => {
                        let hessian = info::validation_hessian(&sub, cfg.lambda);
                        let noise = grad_noise(&sub, &targets, &traj.weight_delta(), cfg.lambda)?;
                        let q = noise.cov * (cfg.eta / cfg.batch as f64);
                        SmoothingSpec::Explicit(lyapunov_solve(&hessian, &q)?)
                    }
                };
                info::score_dataset(&deltas, &Measure::Si(spec))
            }
        }
    }

    /// Validation accuracy of the linearized model trained on `idx`.
    pub fn accuracy(&self, idx: &[usize]) -> Result<f64> {
        let (sub, targets) = self.restrict(idx)?;
        let kernel = Kernel::build(&sub, self.config.lambda)?;
        let traj = Trajectory::new(&kernel, &sub, &targets, self.config)?;
        let cross = cross_kernel(&self.val_store, &sub)?;
        let pred = traj.prediction(&cross, &self.val_store.f0_vector())?;
        let k = self.store.k();
        let correct = self
            .val_labels
            .iter()
            .enumerate()
            .filter(|(j, &label)| decode_prediction(&pred.as_slice()[j * k..(j + 1) * k]) == label)
            .count();
        Ok(correct as f64 / self.val_labels.len().max(1) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Remove the least informative samples first.
    Bottom,
    /// Remove the most informative samples first.
    Top,
    Random,
    /// Remove the least informative `step` fraction, rescore, repeat.
    BottomIterative,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Bottom => "bottom",
            Strategy::Top => "top",
            Strategy::Random => "random",
            Strategy::BottomIterative => "bottom-iterative",
        }
    }
}

/// `0, step, 2·step, ...` up to `fraction`.
pub fn ratio_grid(fraction: f64, step: f64) -> Result<Vec<f64>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} must lie in (0, 1)")));
    }
    if !(step > 0.0 && step <= fraction) {
        return Err(Error::InvalidArgument(format!("step {step} must lie in (0, fraction]")));
    }
    let count = (fraction / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|j| j as f64 * step).collect())
}

fn removal_count(ratio: f64, n: usize) -> usize {
    (ratio * n as f64).round() as usize
}

/// Validation accuracy after removing `ratio · n` samples under `strategy`,
/// for each ratio (ascending). `initial` holds the full-data scores.
pub fn removal_curve(
    problem: &Problem,
    strategy: Strategy,
    ratios: &[f64],
    step: f64,
    initial: &ScoreReport,
    measure: MeasureTag,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let n = problem.n();
    ensure_dim(initial.len() == n, || format!("{} initial scores for {n} samples", initial.len()))?;
    if ratios.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("ratios must be ascending".into()));
    }
    let mut out = Vec::with_capacity(ratios.len());
    if strategy == Strategy::BottomIterative {
        let chunk = removal_count(step, n).max(1);
        let mut retained = problem.all();
        let mut removed = 0;
        for &r in ratios {
            let target = removal_count(r, n);
            while removed < target {
                let take = chunk.min(target - removed);
                if take >= retained.len() {
                    return Err(Error::InvalidArgument("retained set is empty".into()));
                }
                let report = if removed == 0 { initial.clone() } else { problem.scores(&retained, measure)? };
                let mut drop: Vec<usize> = report.order()[..take].to_vec();
                drop.sort_unstable();
                let mut pos = 0;
                retained.retain(|_| {
                    let keep = drop.binary_search(&pos).is_err();
                    pos += 1;
                    keep
                });
                removed += take;
            }
            out.push((r, problem.accuracy(&retained)?));
        }
        return Ok(out);
    }
    let order = match strategy {
        Strategy::Bottom => initial.order(),
        Strategy::Top => initial.order().into_iter().rev().collect(),
        Strategy::Random => {
            let mut o = problem.all();
            o.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            o
        }
        Strategy::BottomIterative => unreachable!(),
    };
    for &r in ratios {
        let m = removal_count(r, n);
        if m >= n {
            return Err(Error::InvalidArgument("retained set is empty".into()));
        }
        let mut retained = order[m..].to_vec();
        retained.sort_unstable();
        out.push((r, problem.accuracy(&retained)?));
    }
    Ok(out)
}

/// Area under the ROC curve of `scores` for separating `positives`, with
/// ties counted as half. `None` when either class is empty.
pub fn roc_auc(scores: &[f64], positives: &[bool]) -> Option<f64> {
    let pos = positives.iter().filter(|&&p| p).count();
    let neg = positives.len() - pos;
    if pos == 0 || neg == 0 || scores.len() != positives.len() {
        return None;
    }
    let order = info::report::ascending_order(scores);
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + end) as f64 / 2.0 + 1.0;
        rank_sum += mid_rank * order[start..=end].iter().filter(|&&i| positives[i]).count() as f64;
        start = end + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    pub group: String,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub min: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize_scores(group: &str, values: &[f64]) -> GroupStats {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    GroupStats {
        group: group.to_string(),
        count: sorted.len(),
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        median: quantile(&sorted, 0.5),
        q25: quantile(&sorted, 0.25),
        q75: quantile(&sorted, 0.75),
        min: sorted.first().copied().unwrap_or(f64::NAN),
        max: sorted.last().copied().unwrap_or(f64::NAN),
    }
}

/// Statistics per group, in lexicographic group order.
pub fn group_stats(scores: &[f64], groups: &[String]) -> Result<Vec<GroupStats>> {
    ensure_dim(scores.len() == groups.len(), || format!("{} groups for {} scores", groups.len(), scores.len()))?;
    let mut by: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (s, g) in scores.iter().zip(groups) {
        by.entry(g.as_str()).or_default().push(*s);
    }
    Ok(by.into_iter().map(|(g, v)| summarize_scores(g, &v)).collect())
}
