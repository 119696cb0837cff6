//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Every seed below was fixed before the criterion was first evaluated.
//! Failing criteria are reported, not hidden; set
//! `IVCATE_ACCEPTANCE_STRICT=1` to turn any failure into a nonzero exit.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use ivcate::cate::HypothesisSpace;
use ivcate::crossfit::{compute_residuals, NuisanceSpecs};
use ivcate::dataset::make_splits;
use ivcate::dgp::{generate, nlsym_surrogate_covariates, gen_nlsym_semi, DgpFamily, DgpSpec};
use ivcate::dmliv::fit_dmliv_on;
use ivcate::driv::{driv_pseudo_outcome, fit_driv_rw, fit_nuisances_with, NuisanceMode};
use ivcate::harness::{
    cate_mse, default_t_grid, orthogonality_suite, replicate_seed, run_coverage, CoverageConfig,
};
use ivcate::inference::ols_robust;
use ivcate::pipeline::{run, EstimatorConfig, Variant};

const SEED: u64 = 20190101;

struct Outcome {
    pass: bool,
    detail: String,
}

fn ac1() -> Outcome {
    let cfg = CoverageConfig {
        dgp: DgpSpec::new(DgpFamily::Coverage, 100_000, 0),
        estimator: EstimatorConfig::default(),
        replicates: 100,
        seed: SEED,
    };
    let reports = run_coverage(&cfg).expect("coverage run");
    let dml = &reports[0];
    let dr = &reports[1];
    let pass = dr.coverage >= 0.85 && dml.coverage <= 0.60 && dml.bias > 0.0 && dr.failures == 0;
    Outcome {
        pass,
        detail: format!(
            "DRIV coverage {:.2} (>= 0.85), DMLATEIV coverage {:.2} (<= 0.60), DMLATEIV bias {:+.3} (> 0), DRIV bias {:+.3}, failures {}",
            dr.coverage, dml.coverage, dml.bias, dr.bias, dr.failures
        ),
    }
}

fn ac2_ac3() -> (Outcome, Outcome) {
    let cov = nlsym_surrogate_covariates(SEED);
    let reps = 100;
    let (mut dr_cov, mut dr_bias, mut dml_bias) = (0usize, 0.0, 0.0);
    let mut coef_cov = [0usize; 3];
    let mut truth_ate = 0.0;
    let mut truth_coef = Vec::new();
    for r in 0..reps {
        let mut spec = DgpSpec::new(DgpFamily::Nlsym, cov.x_raw.nrows(), replicate_seed(SEED, r));
        spec.covariate_seed = SEED;
        let sim = gen_nlsym_semi(&cov, &spec).expect("nlsym sample");
        let truth = sim.truth.true_ate;
        truth_ate = truth;
        let cfg = EstimatorConfig {
            space: HypothesisSpace::LinearSubset { features: vec![4, 7] },
            seed: r as u64,
            ..EstimatorConfig::default()
        };
        let out = run(&sim.data, &cfg).expect("nlsym estimate");
        let ate = out.report.ate.expect("driv ate");
        dr_cov += usize::from(ate.covers(truth));
        dr_bias += (ate.point - truth) / reps as f64;
        dml_bias += (out.report.dmlateiv.point - truth) / reps as f64;
        let proj = out.report.projection.expect("linear projection");
        let (_, coefs) = sim.truth.projection.clone().expect("normalized truth");
        for (j, c) in coefs.iter().enumerate() {
            coef_cov[j] += usize::from(proj.covers(j, *c));
        }
        truth_coef = coefs;
    }
    let ate_cov = dr_cov as f64 / reps as f64;
    let ac2 = Outcome {
        pass: ate_cov >= 0.88 && dr_bias.abs() < dml_bias.abs(),
        detail: format!(
            "true ATE {truth_ate:.4}; DRIV coverage {ate_cov:.2} (>= 0.88), |DRIV bias| {:.4} < |DMLATEIV bias| {:.4}",
            dr_bias.abs(),
            dml_bias.abs()
        ),
    };
    let rates: Vec<f64> = coef_cov.iter().map(|&c| c as f64 / reps as f64).collect();
    let ac3 = Outcome {
        pass: rates.iter().all(|&r| r >= 0.80),
        detail: format!(
            "coverage of ({:.3}, {:.3}, {:.3}) = ({:.2}, {:.2}, {:.2}) (each >= 0.80)",
            truth_coef[0], truth_coef[1], truth_coef[2], rates[0], rates[1], rates[2]
        ),
    };
    (ac2, ac3)
}

fn ac4() -> Outcome {
    let reps = 30;
    let mut covered = 0;
    let mut mean = 0.0;
    let mut truth = 0.0;
    for r in 0..reps {
        let sim = generate(&DgpSpec::new(DgpFamily::Tripadvisor, 200_000, replicate_seed(SEED, r)))
            .expect("tripadvisor sample");
        truth = sim.truth.true_ate;
        let cfg = EstimatorConfig {
            seed: r as u64,
            ..EstimatorConfig::default()
        };
        let ate = run(&sim.data, &cfg).expect("estimate").report.ate.expect("driv ate");
        covered += usize::from(ate.covers(truth));
        mean += ate.point / reps as f64;
    }
    let rate = covered as f64 / reps as f64;
    Outcome {
        pass: rate >= 0.85,
        detail: format!("true ATE {truth}; DRIV coverage {rate:.2} (>= 0.85), mean estimate {mean:.4}"),
    }
}

fn ac5() -> Outcome {
    let start = Instant::now();
    let reports = orthogonality_suite(20_000, SEED, &default_t_grid()).expect("orthogonality suite");
    let elapsed = start.elapsed().as_secs_f64();
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{}/{} slope {:?}", r.loss.name(), r.direction.name(), r.slope))
        .collect();
    let l1h = reports
        .iter()
        .find(|r| !r.expected_orthogonal)
        .and_then(|r| r.slope)
        .unwrap_or(f64::NAN);
    Outcome {
        pass: failed.is_empty() && reports.len() == 13 && elapsed < 300.0,
        detail: format!(
            "{}/13 pairs pass, L1/h slope {l1h:.3}, {elapsed:.1}s{}",
            13 - failed.len(),
            if failed.is_empty() { String::new() } else { format!("; failing: {}", failed.join(", ")) }
        ),
    }
}

fn ac6() -> Outcome {
    let sim = generate(&DgpSpec::new(DgpFamily::Coverage, 100_000, SEED)).expect("coverage sample");
    let nuis = sim.oracle.nuisances(&sim.data.z).with_theta_pre(sim.truth.theta.clone());
    let res = compute_residuals(&sim.data, &nuis).expect("residuals");
    let pseudo = driv_pseudo_outcome(&res, &nuis, None).expect("pseudo outcome");
    let f = DMatrix::from_column_slice(sim.truth.theta.len(), 1, &sim.truth.theta);
    let fit = ols_robust(&pseudo.y_dr, &f, true, 0.95).expect("regression");
    let (a, b) = (fit.coefficients[0], fit.coefficients[1]);
    Outcome {
        pass: (b - 1.0).abs() <= 0.05 && a.abs() <= 0.05,
        detail: format!(
            "slope {b:.4} (se {:.4}), intercept {a:+.4} (se {:.4}); tolerance 0.05 each",
            fit.robust_stderr[1], fit.robust_stderr[0]
        ),
    }
}

fn ac7() -> Outcome {
    let mut worst: f64 = 0.0;
    for (family, space) in [
        (DgpFamily::Tripadvisor, HypothesisSpace::Constant),
        (DgpFamily::Tripadvisor, HypothesisSpace::Linear),
        (DgpFamily::Coverage, HypothesisSpace::Linear),
    ] {
        let sim = generate(&DgpSpec::new(family, 20_000, SEED)).expect("sample");
        let plan = make_splits(sim.data.n(), 2, SEED).expect("splits");
        let specs = NuisanceSpecs::linear();
        let nuis = fit_nuisances_with(&sim.data, &specs, &plan, NuisanceMode::Binary { r: 0.5 })
            .expect("nuisances")
            .with_theta_pre(vec![0.0; sim.data.n()]);
        let res = compute_residuals(&sim.data, &nuis).expect("residuals");
        let a = fit_dmliv_on(&sim.data.x, &res, &space).expect("dmliv").predict(&sim.data.x).unwrap();
        let b = fit_driv_rw(&sim.data.x, &res, &nuis, &space).expect("driv-rw").predict(&sim.data.x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            worst = worst.max((u - v).abs());
        }
    }
    Outcome {
        pass: worst <= 1e-8,
        detail: format!("max |DRIV-RW(theta_pre = 0) - DMLIV| = {worst:.2e} (<= 1e-8)"),
    }
}

fn ac8() -> Outcome {
    let (sims, n, k) = (1000, 500, 3);
    let beta = [1.0, -0.5, 2.0];
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut hits = 0usize;
    let mut total = 0usize;
    for _ in 0..sims {
        let f = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng));
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                (0..k).map(|j| beta[j] * f[(i, j)]).sum::<f64>() + e
            })
            .collect();
        let fit = ols_robust(&y, &f, false, 0.95).expect("ols");
        for (j, &b) in beta.iter().enumerate() {
            hits += usize::from(fit.covers(j, b));
            total += 1;
        }
    }
    let rate = hits as f64 / total as f64;
    Outcome {
        pass: (0.93..=0.97).contains(&rate),
        detail: format!("empirical coverage {rate:.4} over {sims} fits x {k} coefficients (0.93-0.97)"),
    }
}

fn ac9() -> Outcome {
    let reps = 5;
    let mse = |variant: Variant, n: usize| -> f64 {
        (0..reps)
            .map(|r| {
                let sim = generate(&DgpSpec::new(DgpFamily::Coverage, n, replicate_seed(SEED, r)))
                    .expect("sample");
                let cfg = EstimatorConfig {
                    variant,
                    space: HypothesisSpace::Linear,
                    seed: r as u64,
                    ..EstimatorConfig::default()
                };
                let model = run(&sim.data, &cfg).expect("estimate").report.model.expect("model");
                cate_mse(&model, &sim.data.x, &sim.truth.theta).expect("mse")
            })
            .sum::<f64>()
            / reps as f64
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for variant in [Variant::Dmliv, Variant::Driv] {
        let (small, large) = (mse(variant, 10_000), mse(variant, 40_000));
        let drop = 1.0 - large / small;
        pass &= drop >= 0.40;
        parts.push(format!("{variant:?} MSE {small:.3} -> {large:.3} ({:.0}% drop)", 100.0 * drop));
    }
    Outcome {
        pass,
        detail: format!("{} (each >= 40%)", parts.join(", ")),
    }
}

type Entry = (&'static str, &'static str, Outcome);

fn report(results: &mut Vec<Entry>, id: &'static str, name: &'static str, o: Outcome, secs: f64) {
    println!(
        "{id} {} {name}: {} [{secs:.1}s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    results.push((id, name, o));
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with("AC-")).collect();
    let wanted = |id: &str| filter.is_empty() || filter.iter().any(|f| f == id);
    let mut results: Vec<Entry> = Vec::new();
    let single: [(&'static str, &'static str, fn() -> Outcome); 7] = [
        ("AC-1", "coverage replication", ac1),
        ("AC-4", "TripAdvisor DGP ATE", ac4),
        ("AC-5", "orthogonality matrix", ac5),
        ("AC-6", "oracle pseudo-outcome", ac6),
        ("AC-7", "binary-instrument equivalence", ac7),
        ("AC-8", "inference calibration", ac8),
        ("AC-9", "consistency trend", ac9),
    ];
    for (id, name, f) in single {
        if id == "AC-4" && (wanted("AC-2") || wanted("AC-3")) {
            let start = Instant::now();
            let (a2, a3) = ac2_ac3();
            let secs = start.elapsed().as_secs_f64();
            if wanted("AC-2") {
                report(&mut results, "AC-2", "NLSYM semi-synthetic ATE", a2, secs);
            }
            if wanted("AC-3") {
                report(&mut results, "AC-3", "coefficient recovery", a3, secs);
            }
        }
        if wanted(id) {
            let start = Instant::now();
            let o = f();
            report(&mut results, id, name, o, start.elapsed().as_secs_f64());
        }
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 && std::env::var("IVCATE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
