//! Synthetic benchmark datasets built from labelled Gaussian clusters.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::ingest::Dataset;

/// An isotropic Gaussian cluster belonging to one class.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub center: DVector<f64>,
    pub std: f64,
    pub label: usize,
    pub group: String,
}

/// A fixed set of clusters from which train and validation sets are drawn
/// independently.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTask {
    pub clusters: Vec<Cluster>,
    pub classes: usize,
}

fn random_direction(dim: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let v: DVector<f64> = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-8 {
            return v / n;
        }
    }
}

impl ClusterTask {
    /// Two classes, each a mixture of `components` clusters. Class means sit
    /// at `±separation/2` along the first axis; component centres scatter
    /// around them with radius `spread`.
    pub fn mixture_binary(dim: usize, components: usize, separation: f64, spread: f64, std: f64, seed: u64) -> Result<Self> {
        if dim == 0 || components == 0 || !(std > 0.0) {
            return Err(Error::InvalidArgument("mixture needs dim, components and std > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut clusters = Vec::new();
        for label in 0..2 {
            let sign = if label == 1 { 1.0 } else { -1.0 };
            for c in 0..components {
                let mut center = random_direction(dim, &mut rng) * spread;
                center[0] += sign * separation / 2.0;
                clusters.push(Cluster {
                    center,
                    std,
                    label,
                    group: format!("class{label}-mode{c}"),
                });
            }
        }
        Ok(ClusterTask { clusters, classes: 2 })
    }

    /// Label 0 holds two sub-classes ("cat", "dog") at different locations,
    /// label 1 one ("deer").
    pub fn subclasses(dim: usize, separation: f64, std: f64, seed: u64) -> Result<Self> {
        if dim < 2 || !(std > 0.0) {
            return Err(Error::InvalidArgument("sub-class task needs dim ≥ 2 and std > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = |rng: &mut ChaCha8Rng| random_direction(dim, rng) * (0.25 * separation);
        let mut axis = |i: usize, v: f64| {
            let mut c = jitter(&mut rng);
            c[i] += v;
            c
        };
        let clusters = vec![
            Cluster { center: axis(0, -separation), std, label: 0, group: "cat".into() },
            Cluster { center: axis(1, separation), std, label: 0, group: "dog".into() },
            Cluster { center: axis(0, separation), std, label: 1, group: "deer".into() },
        ];
        Ok(ClusterTask { clusters, classes: 2 })
    }

    /// Draws `counts[c]` points from cluster `c`, in shuffled order.
    pub fn sample(&self, counts: &[usize], seed: u64) -> Result<Dataset> {
        if counts.len() != self.clusters.len() {
            return Err(Error::Dimension(format!("{} counts for {} clusters", counts.len(), self.clusters.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &m)| std::iter::repeat_n(c, m)).collect();
        order.shuffle(&mut rng);
        let dim = self.clusters.first().map_or(0, |c| c.center.len());
        let mut inputs = DMatrix::zeros(order.len(), dim);
        for (row, &c) in order.iter().enumerate() {
            let cl = &self.clusters[c];
            let noise = Normal::new(0.0, cl.std).expect("std checked positive");
            for j in 0..dim {
                inputs[(row, j)] = cl.center[j] + noise.sample(&mut rng);
            }
        }
        let labels = order.iter().map(|&c| self.clusters[c].label).collect();
        let groups = order.iter().map(|&c| self.clusters[c].group.clone()).collect();
        Dataset::new(inputs, labels, self.classes)?.with_groups(groups)
    }

    /// Splits `total` evenly over classes, then over each class's clusters.
    pub fn balanced_counts(&self, total: usize) -> Vec<usize> {
        let mut counts = vec![0; self.clusters.len()];
        for label in 0..self.classes {
            let members: Vec<usize> = (0..self.clusters.len()).filter(|&c| self.clusters[c].label == label).collect();
            let share = total / self.classes + usize::from(label < total % self.classes);
            for (pos, &c) in members.iter().enumerate() {
                counts[c] = share / members.len() + usize::from(pos < share % members.len());
            }
        }
        counts
    }

    /// Splits `total` evenly over classes; within a class the `j`-th cluster
    /// gets weight `decay^j`. Rounds by largest remainder so the sum is exact.
    pub fn geometric_counts(&self, total: usize, decay: f64) -> Result<Vec<usize>> {
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::InvalidArgument("decay must lie in (0, 1]".into()));
        }
        let mut counts = vec![0; self.clusters.len()];
        for label in 0..self.classes {
            let members: Vec<usize> = (0..self.clusters.len()).filter(|&c| self.clusters[c].label == label).collect();
            let share = total / self.classes + usize::from(label < total % self.classes);
            let weights: Vec<f64> = (0..members.len()).map(|j| decay.powi(j as i32)).collect();
            let sum: f64 = weights.iter().sum();
            let exact: Vec<f64> = weights.iter().map(|w| share as f64 * w / sum).collect();
            let mut given = 0;
            for (&c, &e) in members.iter().zip(&exact) {
                counts[c] = e.floor() as usize;
                given += counts[c];
            }
            let mut by_remainder: Vec<usize> = (0..members.len()).collect();
            by_remainder.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
            for &j in by_remainder.iter().take(share - given) {
                counts[members[j]] += 1;
            }
        }
        Ok(counts)
    }
}

/// Two data sources for the same binary task. The "easy" source repeats a
/// few well-separated prototypes `copies` times each; the "hard" source
/// draws fresh high-variance points near the class boundary.
pub fn hard_easy_sources(dim: usize, hard: usize, easy_unique: usize, copies: usize, seed: u64) -> Result<Dataset> {
    if dim == 0 || hard == 0 || easy_unique == 0 || copies == 0 {
        return Err(Error::InvalidArgument("source sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut push = |x: DVector<f64>, label: usize, group: &str| rows.push((x, label, group.to_string()));
    let easy_noise = Normal::new(0.0, 0.3).expect("positive");
    let hard_noise = Normal::new(0.0, 1.5).expect("positive");
    for u in 0..easy_unique {
        let label = u % 2;
        let sign = if label == 1 { 1.0 } else { -1.0 };
        let mut x = DVector::from_fn(dim, |_, _| easy_noise.sample(&mut rng));
        x[0] += 3.0 * sign;
        for _ in 0..copies {
            push(x.clone(), label, "easy");
        }
    }
    for h in 0..hard {
        let label = h % 2;
        let sign = if label == 1 { 1.0 } else { -1.0 };
        let mut x = DVector::from_fn(dim, |_, _| hard_noise.sample(&mut rng));
        x[0] += sign;
        push(x, label, "hard");
    }
    rows.shuffle(&mut rng);
    let inputs = DMatrix::from_fn(rows.len(), dim, |r, c| rows[r].0[c]);
    let labels = rows.iter().map(|r| r.1).collect();
    let groups = rows.into_iter().map(|r| r.2).collect();
    Dataset::new(inputs, labels, 2)?.with_groups(groups)
}

/// The two-class Gaussian-mixture benchmark: 25 tight modes per class,
/// scattered so the classes interleave. Sample it with [`mixture_counts`].
pub fn benchmark_mixture(dim: usize, seed: u64) -> Result<ClusterTask> {
    ClusterTask::mixture_binary(dim, 25, 2.0, 4.0, 0.5, seed)
}

/// Mode sizes for [`benchmark_mixture`]: frequent modes and a tail of rare
/// ones, each mode 0.9 times the size of the previous.
pub fn mixture_counts(task: &ClusterTask, total: usize) -> Result<Vec<usize>> {
    task.geometric_counts(total, 0.9)
}

/// The rare/common sub-class benchmark.
pub fn benchmark_subclasses(dim: usize, seed: u64) -> Result<ClusterTask> {
    ClusterTask::subclasses(dim, 3.0, 1.0, seed)
}

/// Cluster sizes for [`benchmark_subclasses`] with `n` samples in total,
/// keeping the rare sub-class 20 times smaller than each common one.
pub fn subclass_counts(n: usize) -> Vec<usize> {
    let rare = (n as f64 / 41.0).round().max(1.0) as usize;
    let rest = n.saturating_sub(rare);
    vec![rare, rest / 2, rest - rest / 2]
}
