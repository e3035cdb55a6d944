mod common;

use common::{gaussian_vec, random_spd, random_store, random_store_like, random_targets, rel_err, rng, uniform};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sampleinfo::dynamics::{TrainConfig, Trajectory};
use sampleinfo::info::{
    fsi_empirical_one, fsi_quadratic, kl_gaussian, score_dataset, si_smooth, validation_hessian, Measure, MeasureTag,
    ScoreReport, SmoothingSpec,
};
use sampleinfo::ingest::{JacobianStore, Provenance};
use sampleinfo::linalg::keep_indices;
use sampleinfo::loo::{downdate_inverse, loo_all, loo_weight_delta};
use sampleinfo::ntk::{cross_kernel, Kernel};
use sampleinfo::oracle::brute_loo;
use serde_json::json;

fn minor_inverse(m: &DMatrix<f64>, block: usize, k: usize) -> DMatrix<f64> {
    let keep = keep_indices(m.nrows(), block, k);
    let minor = DMatrix::from_fn(keep.len(), keep.len(), |r, c| m[(keep[r], keep[c])]);
    minor.lu().try_inverse().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn downdate_matches_direct_minor_inverse(n in 2usize..15, k in 1usize..4, seed in 0u64..10_000) {
        let mut r = rng(seed);
        let m = random_spd(n * k, 0.1, &mut r);
        let inv = m.clone().lu().try_inverse().unwrap();
        let block = seed as usize % n;
        let fast = downdate_inverse(&inv, &m, block, k).unwrap();
        prop_assert!(rel_err(&fast, &minor_inverse(&m, block, k)) <= 1e-8);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_equal(d in 1usize..6, seed in 0u64..10_000) {
        let mut r = rng(seed);
        let (s1, s2) = (random_spd(d, 0.2, &mut r), random_spd(d, 0.2, &mut r));
        let (m1, m2) = (gaussian_vec(d, &mut r), gaussian_vec(d, &mut r));
        prop_assert!(kl_gaussian(&m1, &s1, &m2, &s2).unwrap() >= 0.0);
        prop_assert!(kl_gaussian(&m1, &s1, &m1, &s1).unwrap().abs() <= 1e-10);
    }

    #[test]
    fn scores_scale_quadratically_with_deltas(c in 0.1f64..10.0, seed in 0u64..10_000) {
        let mut r = rng(seed);
        let store = random_store(6, 1, 12, &mut r);
        let targets = random_targets(6, 1, &mut r);
        let cfg = TrainConfig { eta: 1.0, time: 2.0, lambda: 0.1, ..TrainConfig::default() };
        let kernel = Kernel::build(&store, cfg.lambda).unwrap();
        let traj = Trajectory::new(&kernel, &store, &targets, cfg).unwrap();
        let cross = cross_kernel(&store, &store).unwrap();
        let deltas = loo_all(&traj, Some(&cross), true).unwrap();
        for measure in [Measure::Fsi { sigma: 0.7 }, Measure::Si(SmoothingSpec::Identity { sigma2: 2.0 })] {
            let base = score_dataset(&deltas, &measure).unwrap();
            let scaled = score_dataset(&deltas.scaled(c), &measure).unwrap();
            for (a, b) in base.scores.iter().zip(&scaled.scores) {
                prop_assert!((b - c * c * a).abs() <= 1e-10 * (1.0 + b.abs()));
            }
        }
    }
}

#[test]
fn downdate_over_200_random_kernels() {
    let mut r = rng(100);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = 2 + (uniform(0.0, 39.0, &mut r) as usize);
        let k = 1 + (uniform(0.0, 3.0, &mut r) as usize);
        let m = random_spd(n * k, 0.05, &mut r);
        let inv = m.clone().lu().try_inverse().unwrap();
        let block = uniform(0.0, n as f64, &mut r) as usize;
        worst = worst.max(rel_err(&downdate_inverse(&inv, &m, block, k).unwrap(), &minor_inverse(&m, block, k)));
    }
    assert!(worst <= 1e-8, "worst {worst}");
}

#[test]
fn fsi_measures_agree_through_prediction_and_weight_space() {
    let mut r = rng(101);
    for _ in 0..20 {
        let store = random_store(10, 2, 30, &mut r);
        let val = random_store_like(&store, 7, &mut r);
        let targets = random_targets(10, 2, &mut r);
        let lambda = uniform(0.05, 0.5, &mut r);
        let cfg = TrainConfig { eta: 1.0, time: uniform(0.5, 5.0, &mut r), lambda, ..TrainConfig::default() };
        let kernel = Kernel::build(&store, lambda).unwrap();
        let traj = Trajectory::new(&kernel, &store, &targets, cfg).unwrap();
        let cross = cross_kernel(&val, &store).unwrap();
        let deltas = loo_all(&traj, Some(&cross), true).unwrap();
        let h = validation_hessian(&val, lambda);
        let preds = deltas.predictions.as_ref().unwrap();
        let weights = deltas.weights.as_ref().unwrap();
        for i in 0..10 {
            let a = fsi_empirical_one(&preds.row(i).transpose(), 1.3, 7).unwrap();
            let b = fsi_quadratic(&weights.row(i).transpose(), &h, lambda, 1.3, 7).unwrap();
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1e-300), "{a} vs {b}");
        }
    }
}

#[test]
fn closed_form_loo_matches_retraining_at_infinity() {
    let mut r = rng(102);
    let store = random_store(9, 1, 20, &mut r);
    let targets = random_targets(9, 1, &mut r);
    let cfg = TrainConfig { eta: 1.0, time: f64::INFINITY, lambda: 0.3, ..TrainConfig::default() };
    let kernel = Kernel::build(&store, cfg.lambda).unwrap();
    let traj = Trajectory::new(&kernel, &store, &targets, cfg).unwrap();
    let fast = loo_all(&traj, None, true).unwrap().weights.unwrap();
    let brute = brute_loo(&store, &targets, None, &cfg, 1.0).unwrap().weights.unwrap();
    assert!(rel_err(&fast, &brute) < 1e-9);
    let single = loo_weight_delta(4, &traj).unwrap();
    assert!((single.transpose() - fast.row(4)).amax() < 1e-12);
}

#[test]
fn closed_form_loo_matches_retraining_at_finite_time() {
    let mut r = rng(103);
    let store = random_store(6, 1, 15, &mut r);
    let targets = random_targets(6, 1, &mut r);
    let cfg = TrainConfig { eta: 0.5, time: 4.0, lambda: 0.1, ..TrainConfig::default() };
    let kernel = Kernel::build(&store, cfg.lambda).unwrap();
    let traj = Trajectory::new(&kernel, &store, &targets, cfg).unwrap();
    let fast = loo_all(&traj, None, true).unwrap().weights.unwrap();
    let brute = brute_loo(&store, &targets, None, &cfg, cfg.eta_t() / 60_000.0).unwrap().weights.unwrap();
    assert!(rel_err(&fast, &brute) < 1e-4);
}

#[test]
fn duplicated_samples_get_equal_scores() {
    let mut r = rng(104);
    let base = random_store(5, 1, 12, &mut r);
    let mut jac = DMatrix::zeros(6, 12);
    jac.rows_mut(0, 5).copy_from(base.jacobian());
    jac.row_mut(5).copy_from(&base.jacobian().row(2));
    let mut f0 = DMatrix::zeros(6, 1);
    f0.rows_mut(0, 5).copy_from(base.f0());
    f0[(5, 0)] = f0[(2, 0)];
    let store = JacobianStore::new(1, base.layers().to_vec(), jac, f0, Provenance::default()).unwrap();
    let mut targets = random_targets(6, 1, &mut r);
    targets[(5, 0)] = targets[(2, 0)];
    let cfg = TrainConfig { eta: 1.0, time: 3.0, lambda: 0.2, ..TrainConfig::default() };
    let kernel = Kernel::build(&store, cfg.lambda).unwrap();
    let traj = Trajectory::new(&kernel, &store, &targets, cfg).unwrap();
    let cross = cross_kernel(&store, &store).unwrap();
    let report = score_dataset(&loo_all(&traj, Some(&cross), false).unwrap(), &Measure::Fsi { sigma: 1.0 }).unwrap();
    let (a, b) = (report.scores[2], report.scores[5]);
    assert!((a - b).abs() <= 1e-10 * a.abs(), "{a} vs {b}");
}

#[test]
fn tied_scores_rank_by_index() {
    let report = ScoreReport::new(MeasureTag::Si, vec![1.0, 0.5, 1.0, 0.5, 2.0], json!({}));
    assert_eq!(report.ranks, vec![2, 0, 3, 1, 4]);
    let mut sorted = report.ranks.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..5).collect::<Vec<_>>());
    assert_eq!(report.order(), vec![1, 3, 0, 2, 4]);
}

#[test]
fn smooth_si_matches_hand_values() {
    let dw = DVector::from_row_slice(&[1.0, 2.0]);
    assert!((si_smooth(&dw, &SmoothingSpec::Identity { sigma2: 1.0 }).unwrap() - 2.5).abs() < 1e-15);
    let cov = DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0, 0.5]));
    // ½(1/2 + 4/0.5) = 4.25
    assert!((si_smooth(&dw, &SmoothingSpec::Explicit(cov)).unwrap() - 4.25).abs() < 1e-12);
}

#[test]
fn score_report_csv_carries_config_hash() {
    let report = ScoreReport::new(MeasureTag::Fsi, vec![0.25, 0.125], json!({"b": 1, "a": [1, 2]}));
    let csv = report.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), format!("# config_sha256={}", report.config_hash()));
    assert!(lines.next().unwrap().starts_with("# config="));
    assert_eq!(lines.next().unwrap(), "index,score,rank,group,flag");
    assert_eq!(lines.count(), 2);
    let reordered = ScoreReport::new(MeasureTag::Fsi, vec![0.25, 0.125], json!({"a": [1, 2], "b": 1}));
    assert_eq!(reordered.config_hash(), report.config_hash());
}
