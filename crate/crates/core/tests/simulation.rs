use approx::assert_relative_eq;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ivcate::dataset::{load_csv, Schema};
use ivcate::dgp::{generate, logistic, mean_compliance_logit, theta_raw, DgpFamily, DgpSpec};
use ivcate::error::Error;
use ivcate::inference::{ols_robust, wls_robust};

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn same_seed_same_draws() {
    for family in [DgpFamily::Tripadvisor, DgpFamily::Coverage, DgpFamily::Nlsym] {
        let n = if family == DgpFamily::Nlsym { 3010 } else { 500 };
        let a = generate(&DgpSpec::new(family, n, 7)).unwrap();
        let b = generate(&DgpSpec::new(family, n, 7)).unwrap();
        let c = generate(&DgpSpec::new(family, n, 8)).unwrap();
        assert_eq!(a.data.y, b.data.y);
        assert_eq!(a.data.x, b.data.x);
        assert_ne!(a.data.y, c.data.y);
    }
}

#[test]
fn tripadvisor_effect_matches_its_average() {
    let sim = generate(&DgpSpec::new(DgpFamily::Tripadvisor, 200_000, 3)).unwrap();
    assert_relative_eq!(sim.truth.true_ate, 0.25, epsilon = 1e-12);
    let (m, se) = mean_and_se(&sim.truth.theta);
    assert!((m - 0.249).abs() < 4.0 * se + 0.002, "{m} +- {se}");
    for i in 0..50 {
        let row: Vec<f64> = sim.raw_x.row(i).iter().copied().collect();
        assert_eq!(sim.truth.theta[i], theta_raw(DgpFamily::Tripadvisor, &row));
    }
}

#[test]
fn noiseless_unconfounded_outcome_is_deterministic() {
    let mut spec = DgpSpec::new(DgpFamily::Coverage, 2000, 4);
    spec.endogeneity_coef = 0.0;
    spec.noise = false;
    let sim = generate(&spec).unwrap();
    for i in 0..sim.data.n() {
        let x0 = sim.raw_x[(i, 0)];
        let expected = sim.truth.theta[i] * sim.data.t[i] + 0.1 * x0 + 0.05;
        assert!((sim.data.y[i] - expected).abs() < 1e-12);
    }
}

#[test]
fn coverage_effect_at_mean_row() {
    let mut row = vec![0.0; 10];
    row[0] = 14.0;
    assert_relative_eq!(theta_raw(DgpFamily::Coverage, &row), 7.8, epsilon = 1e-12);
    row[7] = 1.0;
    assert_relative_eq!(theta_raw(DgpFamily::Coverage, &row), 4.8, epsilon = 1e-12);
}

#[test]
fn compliance_integral_matches_quadrature() {
    for x in [0.0, 3.0, 14.0, 28.0] {
        let m = 2000;
        let h = 10.0 / m as f64;
        let simpson: f64 = (0..=m)
            .map(|k| {
                let w = if k == 0 || k == m { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                w * logistic(0.1 * (x + k as f64 * h))
            })
            .sum::<f64>()
            * h
            / 3.0
            / 10.0;
        assert!((mean_compliance_logit(x) - simpson).abs() < 1e-12);
    }
}

#[test]
fn oracle_moments_match_arm_averages() {
    let sim = generate(&DgpSpec::new(DgpFamily::Coverage, 200_000, 12)).unwrap();
    let o = &sim.oracle;
    for arm in [0.0, 1.0] {
        let rows: Vec<usize> = (0..sim.data.n()).filter(|&i| sim.data.z[i] == arm).collect();
        let pick = |v: &[f64]| -> Vec<f64> { rows.iter().map(|&i| v[i]).collect() };
        let (h, g) = if arm == 1.0 { (&o.h1, &o.g1) } else { (&o.h0, &o.g0) };
        let t_gap: Vec<f64> = rows.iter().map(|&i| sim.data.t[i] - h[i]).collect();
        let y_gap: Vec<f64> = rows.iter().map(|&i| sim.data.y[i] - g[i]).collect();
        for gap in [t_gap, y_gap] {
            let (m, se) = mean_and_se(&gap);
            assert!(m.abs() < 4.0 * se, "arm {arm}: {m} +- {se}");
        }
        assert!(pick(&o.pi).iter().all(|&p| p == 0.5));
    }
}

#[test]
fn exact_fit_has_zero_standard_errors() {
    let x = DMatrix::from_fn(20, 1, |r, _| r as f64);
    let y: Vec<f64> = (0..20).map(|r| 3.0 + 2.0 * r as f64).collect();
    let fit = ols_robust(&y, &x, true, 0.95).unwrap();
    assert_relative_eq!(fit.coefficients[0], 3.0, epsilon = 1e-10);
    assert_relative_eq!(fit.coefficients[1], 2.0, epsilon = 1e-10);
    assert!(fit.robust_stderr.iter().all(|&s| s < 1e-8));
}

#[test]
fn duplicated_column_is_collinear() {
    let x = DMatrix::from_fn(30, 2, |r, _| (r * r) as f64);
    let y: Vec<f64> = (0..30).map(|r| r as f64).collect();
    match ols_robust(&y, &x, true, 0.95) {
        Err(Error::Collinearity { columns }) => assert_eq!(columns, vec![1]),
        other => panic!("expected collinearity, got {other:?}"),
    }
}

#[test]
fn weighted_sandwich_matches_matrix_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 60;
    let f = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>());
    let y: Vec<f64> = (0..n).map(|i| 1.0 + f[(i, 0)] - f[(i, 1)] + rng.random::<f64>()).collect();
    let w: Vec<f64> = (0..n).map(|_| 0.5 + rng.random::<f64>()).collect();
    let fit = wls_robust(&y, &f, Some(&w), true, 0.9).unwrap();

    let x = DMatrix::from_fn(n, 3, |r, c| if c == 0 { 1.0 } else { f[(r, c - 1)] });
    let wd = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&w));
    let yv = nalgebra::DVector::from_column_slice(&y);
    let xtwx_inv = (x.transpose() * &wd * &x).try_inverse().unwrap();
    let beta = &xtwx_inv * x.transpose() * &wd * &yv;
    let e = &yv - &x * &beta;
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |i, _| (w[i] * e[i]).powi(2)));
    let cov = &xtwx_inv * x.transpose() * s * &x * &xtwx_inv * (n as f64 / (n - 3) as f64);
    for j in 0..3 {
        assert_relative_eq!(fit.coefficients[j], beta[j], epsilon = 1e-10);
        assert_relative_eq!(fit.robust_stderr[j], cov[(j, j)].sqrt(), epsilon = 1e-10);
        let half = 1.6448536269514722 * fit.robust_stderr[j];
        assert_relative_eq!(fit.ci[j].1 - fit.coefficients[j], half, epsilon = 1e-9);
    }
}

#[test]
fn simulated_data_survives_a_file_round_trip() {
    let sim = generate(&DgpSpec::new(DgpFamily::Tripadvisor, 300, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.csv");
    sim.data.save_csv(&path).unwrap();
    let back = load_csv(&path, &Schema::new("y", "t", "z")).unwrap();
    assert_eq!(back.x, sim.data.x);
    assert_eq!(back.t, sim.data.t);
    assert_eq!(back.z, sim.data.z);
    assert_eq!(back.y, sim.data.y);
}
