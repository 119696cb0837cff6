use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use ivcate::dataset::make_splits;
use ivcate::learners::{
    cross_validate, fit_classifier, fit_regressor, GbtParams, LearnerSpec,
};

fn gaussian_design(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(rng))
}

/// Least squares with intercept via SVD, used as an independent reference.
fn reference_ols(x: &DMatrix<f64>, y: &[f64], cols: &[usize]) -> (Vec<f64>, f64) {
    let n = x.nrows();
    let a = DMatrix::from_fn(n, cols.len() + 1, |r, c| if c == 0 { 1.0 } else { x[(r, cols[c - 1])] });
    let b = DVector::from_column_slice(y);
    let coef = a.clone().svd(true, true).solve(&b, 1e-12).unwrap();
    let rss = (&a * &coef - &b).norm_squared();
    (coef.iter().copied().collect(), rss)
}

/// Ridge with unpenalized intercept on centered data, `(X'X + lambda I) b = X'y`.
fn reference_ridge(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let (n, d) = x.shape();
    let xm: Vec<f64> = (0..d).map(|c| x.column(c).mean()).collect();
    let ym = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, d, |r, c| x[(r, c)] - xm[c]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - ym));
    let gram = xc.transpose() * &xc + DMatrix::identity(d, d) * lambda;
    let beta = gram.lu().solve(&(xc.transpose() * yc)).unwrap();
    let b0 = ym - (0..d).map(|c| xm[c] * beta[c]).sum::<f64>();
    (b0, beta.iter().copied().collect())
}

#[test]
fn lasso_recovers_true_support_of_best_subset() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, d) = (50, 10);
    let x = gaussian_design(n, d, &mut rng);
    let truth = [(2usize, 3.0), (7usize, -2.0)];
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let e: f64 = StandardNormal.sample(&mut rng);
            truth.iter().map(|&(j, b)| b * x[(i, j)]).sum::<f64>() + 0.01 * e
        })
        .collect();

    // Best subset of size at most two by exhaustive residual sums.
    let mut best: (Vec<usize>, f64) = (Vec::new(), reference_ols(&x, &y, &[]).1);
    for a in 0..d {
        let rss = reference_ols(&x, &y, &[a]).1;
        if rss < best.1 {
            best = (vec![a], rss);
        }
        for b in a + 1..d {
            let rss = reference_ols(&x, &y, &[a, b]).1;
            if rss < best.1 {
                best = (vec![a, b], rss);
            }
        }
    }
    assert_eq!(best.0, vec![2, 7]);

    let spec = LearnerSpec::Lasso {
        lambda: 1.0,
        cv_grid: vec![0.001, 0.01, 0.1, 1.0],
    };
    let model = fit_regressor(&spec, &x, &y, None).unwrap();
    let (_, coef) = model.coefficients().unwrap();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| coef[b].abs().total_cmp(&coef[a].abs()));
    let mut top = order[..2].to_vec();
    top.sort_unstable();
    assert_eq!(top, best.0);
    let largest_spurious = order[2..].iter().map(|&j| coef[j].abs()).fold(0.0, f64::max);
    assert!(largest_spurious < 0.01, "spurious coefficient {largest_spurious}");
}

#[test]
fn ridge_matches_reference_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = gaussian_design(80, 4, &mut rng);
    let y: Vec<f64> = (0..80).map(|i| x[(i, 0)] - 2.0 * x[(i, 3)] + rng.random::<f64>()).collect();
    for lambda in [0.0, 0.5, 30.0] {
        let (b0, beta) = reference_ridge(&x, &y, lambda);
        let model = fit_regressor(&LearnerSpec::ridge(lambda), &x, &y, None).unwrap();
        let (m0, mb) = model.coefficients().unwrap();
        assert!((m0 - b0).abs() < 1e-9);
        for (a, b) in mb.iter().zip(&beta) {
            assert!((a - b).abs() < 1e-9, "lambda {lambda}: {a} vs {b}");
        }
    }
}

#[test]
fn duplicated_rows_equal_doubled_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = gaussian_design(40, 3, &mut rng);
    let y: Vec<f64> = (0..40).map(|i| x[(i, 1)] + rng.random::<f64>()).collect();
    let dup: Vec<usize> = (0..40).chain(0..10).collect();
    let xd = DMatrix::from_fn(dup.len(), 3, |r, c| x[(dup[r], c)]);
    let yd: Vec<f64> = dup.iter().map(|&i| y[i]).collect();
    let w: Vec<f64> = (0..40).map(|i| if i < 10 { 2.0 } else { 1.0 }).collect();
    let a = fit_regressor(&LearnerSpec::Ols, &xd, &yd, None).unwrap();
    let b = fit_regressor(&LearnerSpec::Ols, &x, &y, Some(&w)).unwrap();
    let pa = a.predict(&x).unwrap();
    let pb = b.predict(&x).unwrap();
    for (u, v) in pa.iter().zip(&pb) {
        assert!((u - v).abs() < 1e-10);
    }
}

#[test]
fn logistic_mean_matches_class_frequency() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 10_000;
    let x = gaussian_design(n, 2, &mut rng);
    let y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.3)))).collect();
    let freq = y.iter().sum::<f64>() / n as f64;
    let model = fit_classifier(&LearnerSpec::logistic(1.0), &x, &y).unwrap();
    let mean = model.predict(&x).unwrap().iter().sum::<f64>() / n as f64;
    assert!((mean - 0.3).abs() < 0.02);
    assert!((mean - freq).abs() < 1e-3);
}

#[test]
fn single_boosted_stump_has_newton_leaf_values() {
    let x = DMatrix::from_column_slice(6, 1, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    let y = [1.0, 2.0, 3.0, 7.0, 8.0, 9.0];
    let lambda = 1.0;
    let params = GbtParams {
        n_estimators: 1,
        max_depth: 1,
        learning_rate: 1.0,
        min_child_weight: 1.0,
        gamma: 0.0,
        reg_lambda: lambda,
        validation_fraction: 0.0,
        ..GbtParams::default()
    };
    let model = fit_regressor(&LearnerSpec::GbtRegressor(params), &x, &y, None).unwrap();
    let base = y.iter().sum::<f64>() / 6.0;
    for group in [&y[..3], &y[3..]] {
        let g: f64 = group.iter().map(|v| base - v).sum();
        let h = group.len() as f64;
        let expected = base - g / (h + lambda);
        let row = if group[0] < base { 0.0 } else { 1.0 };
        assert!((model.predict_row(&[row]) - expected).abs() < 1e-12);
    }
}

#[test]
fn cross_validation_winner_matches_independent_loss_table() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 60;
    let x = gaussian_design(n, 5, &mut rng);
    let y: Vec<f64> = (0..n)
        .map(|i| 0.5 * x[(i, 0)] + 0.2 * x[(i, 2)] + 2.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    let lambdas = [0.1, 10.0, 300.0];
    let k = 3;
    let plan = make_splits(n, k, 0).unwrap();
    let table: Vec<f64> = lambdas
        .iter()
        .map(|&lambda| {
            (0..k)
                .map(|fold| {
                    let train = plan.train_rows(fold);
                    let test = plan.test_rows(fold);
                    let xt = DMatrix::from_fn(train.len(), 5, |r, c| x[(train[r], c)]);
                    let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
                    let (b0, beta) = reference_ridge(&xt, &yt, lambda);
                    let mse = test
                        .iter()
                        .map(|&i| {
                            let p = b0 + (0..5).map(|c| beta[c] * x[(i, c)]).sum::<f64>();
                            (y[i] - p).powi(2)
                        })
                        .sum::<f64>()
                        / test.len() as f64;
                    mse.sqrt()
                })
                .sum::<f64>()
                / k as f64
        })
        .collect();
    let winner = (0..3).min_by(|&a, &b| table[a].total_cmp(&table[b])).unwrap();
    let grid: Vec<LearnerSpec> = lambdas.iter().map(|&l| LearnerSpec::ridge(l)).collect();
    assert_eq!(cross_validate(&grid, &x, &y, k).unwrap(), grid[winner]);
}

#[test]
fn strong_signal_prefers_small_ridge_penalty() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = gaussian_design(90, 3, &mut rng);
    let y: Vec<f64> = (0..90).map(|i| 5.0 * x[(i, 0)] - 4.0 * x[(i, 2)] + 0.1 * rng.random::<f64>()).collect();
    let grid = [LearnerSpec::ridge(0.01), LearnerSpec::ridge(1e6)];
    assert_eq!(cross_validate(&grid, &x, &y, 3).unwrap(), grid[0]);
    let single = [LearnerSpec::ridge(7.0)];
    assert_eq!(cross_validate(&single, &x, &y, 3).unwrap(), single[0]);
}

#[test]
fn folds_beyond_rows_are_rejected() {
    let x = DMatrix::from_element(3, 1, 1.0);
    let grid = [LearnerSpec::ridge(1.0), LearnerSpec::ridge(2.0)];
    assert!(cross_validate(&grid, &x, &[1.0, 2.0, 3.0], 4).is_err());
}
