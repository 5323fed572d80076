use deepin_core::inference::{covariate_test, CondMeanOptions, CovariateTestOptions};
use deepin_core::model::Task;
use deepin_core::numerics::svd;
use deepin_core::trainer::{normalize, train, truncate, Thresholds};
use deepin_core::{DeepInModel, Matrix, PenaltyConfig, Rng, TrainOptions};
use proptest::prelude::*;

fn model(seed: u64, d: usize, rows: usize) -> DeepInModel {
    let mut rng = Rng::new(seed);
    let mut m = DeepInModel::init(d, rows, &[4, 4], 2, Task::Regression, &mut rng).unwrap();
    for v in m.rep.matrix_mut().as_mut_slice() {
        *v = rng.normal();
    }
    for v in m.net.params_mut() {
        *v += 0.3 * rng.normal();
    }
    m
}

fn rank(b: &Matrix) -> usize {
    let s = svd(b).unwrap().s;
    let top = s.iter().cloned().fold(0.0, f64::max);
    s.iter().filter(|v| **v > 1e-10 * top).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn truncate_is_idempotent_and_leaves_no_small_group(
        seed in any::<u64>(),
        d in 1usize..8,
        rows in 1usize..6,
        tau1 in 0.0f64..2.5,
        tau2 in 0.0f64..2.5,
        tau3 in 0.0f64..0.5,
    ) {
        let mut m = model(seed, d, rows);
        truncate(&mut m, tau1, tau2, tau3).unwrap();
        for i in m.rep.active_row_indices() {
            prop_assert!(m.rep.row_norm(i) > tau1);
        }
        for j in m.rep.active_col_indices() {
            prop_assert!(m.rep.col_norm(j) > tau2);
        }
        for (k, v) in m.net.params().iter().enumerate() {
            if m.theta_active()[k] {
                prop_assert!(v.abs() > tau3);
            } else {
                prop_assert_eq!(*v, 0.0);
            }
        }
        let once = m.clone();
        truncate(&mut m, tau1, tau2, tau3).unwrap();
        prop_assert_eq!(m, once);
    }

    #[test]
    fn normalize_is_idempotent_and_keeps_rank(
        seed in any::<u64>(),
        rows in 1usize..6,
        cols in 1usize..8,
        rank_cap in 1usize..6,
    ) {
        let mut rng = Rng::new(seed);
        let r = rank_cap.min(rows).min(cols);
        let l = Matrix::from_fn(rows, r, |_, _| rng.normal());
        let q = Matrix::from_fn(r, cols, |_, _| rng.normal());
        let b = l.matmul(&q).unwrap();
        let n = normalize(&b).unwrap();
        for i in 0..rows {
            let row = n.b.row(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() <= 1e-12);
            let first = row.iter().find(|v| **v != 0.0).unwrap();
            prop_assert!(*first > 0.0);
        }
        let again = normalize(&n.b).unwrap();
        prop_assert_eq!(&again.b, &n.b);
        prop_assert_eq!(rank(&n.b), rank(&b));
    }

    #[test]
    fn objective_is_invariant_to_batch_order(seed in any::<u64>(), n in 2usize..30) {
        let m = model(seed, 5, 3);
        let mut rng = Rng::new(seed ^ 1);
        let x = Matrix::from_fn(n, 5, |_, _| rng.normal());
        let y: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let cfg = PenaltyConfig::new(0.1, 0.1, 0.1, 0.01);
        let batch: Vec<usize> = (0..n).collect();
        let perm = rng.permutation(n);
        let a = m.objective_and_subgrad(&x, &y, &batch, &cfg).unwrap();
        let b = m.objective_and_subgrad(&x, &y, &perm, &cfg).unwrap();
        prop_assert!((a.objective - b.objective).abs() <= 1e-12 * a.objective.abs().max(1.0));
        for (g, h) in a.grad_theta.iter().zip(&b.grad_theta) {
            prop_assert!((g - h).abs() <= 1e-10 * g.abs().max(1.0));
        }
    }
}

#[test]
fn masked_groups_stay_zero_through_training() {
    let mut m = model(3, 6, 4);
    m.rep.mask_row(1);
    m.rep.mask_col(5);
    m.mask_theta(0);
    let mut rng = Rng::new(4);
    let x = Matrix::from_fn(200, 6, |_, _| rng.normal());
    let y: Vec<f64> = (0..200).map(|i| x[(i, 0)] + x[(i, 5)]).collect();
    let cfg = PenaltyConfig::new(0.0, 0.0, 0.0, 0.0).with_thresholds(Thresholds::Fixed {
        tau1: 0.0,
        tau2: 0.0,
        tau3: 0.0,
    });
    let opts = TrainOptions {
        epochs: 20,
        ..TrainOptions::default()
    };
    let (fit, _) = train(m, &x, &y, &cfg, &opts).unwrap();
    assert!(fit.rep.matrix().row(1).iter().all(|v| *v == 0.0));
    assert!((0..4).all(|i| fit.rep.matrix()[(i, 5)] == 0.0));
    assert_eq!(fit.net.params()[0], 0.0);
}

#[test]
fn covariate_report_follows_column_relabeling() {
    let opts = CovariateTestOptions {
        cond_mean: CondMeanOptions {
            epochs: 30,
            ..CondMeanOptions::default()
        },
        ..CovariateTestOptions::default()
    };
    for seed in 0..3u64 {
        let mut rng = Rng::new(seed);
        let n = 600;
        let d = 4;
        let x = Matrix::from_fn(n, d, |_, _| rng.normal());
        let y: Vec<f64> = (0..n).map(|i| x[(i, 0)] - 0.5 * x[(i, 2)] + 0.5 * rng.normal()).collect();
        let init = DeepInModel::init(d, 1, &[6], 2, Task::Regression, &mut rng).unwrap();
        let cfg = PenaltyConfig::new(0.0, 0.0, 0.0, 0.0).with_thresholds(Thresholds::Fixed {
            tau1: 0.0,
            tau2: 0.0,
            tau3: 0.0,
        });
        let topts = TrainOptions {
            epochs: 20,
            seed,
            ..TrainOptions::default()
        };
        let (fit, _) = train(init, &x, &y, &cfg, &topts).unwrap();
        let perm = rng.permutation(d);
        let xp = Matrix::from_fn(n, d, |i, j| x[(i, perm[j])]);
        let mut fp = fit.clone();
        for r in 0..fit.rep.matrix().rows() {
            for j in 0..d {
                fp.rep.matrix_mut().row_mut(r)[j] = fit.rep.matrix()[(r, perm[j])];
            }
        }
        let a = covariate_test(&fit, &x, &y, &opts).unwrap();
        let b = covariate_test(&fp, &xp, &y, &opts).unwrap();
        assert_eq!(a.results.len(), b.results.len());
        for rb in &b.results {
            let ra = a.results.iter().find(|r| r.column == perm[rb.column]).unwrap();
            let (pa, pb) = (ra.p_value.unwrap(), rb.p_value.unwrap());
            assert!((pa - pb).abs() <= 1e-6 * pa.max(1e-3), "seed {seed}: {pa} vs {pb}");
            assert!((ra.statistic - rb.statistic).abs() <= 1e-6 * ra.statistic.max(1.0));
        }
    }
}
