//! Browser bindings for the `ivcate` demo page. Every export returns a JSON
//! string; errors surface as JavaScript exceptions carrying the message.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use ivcate::cate::HypothesisSpace;
use ivcate::dgp::{generate, DgpFamily, DgpSpec, GroundTruth};
use ivcate::harness::{
    default_t_grid, orthogonality_suite, run_coverage, CoverageConfig, CoverageReport,
    OrthogonalityReport,
};
use ivcate::pipeline::{run, EstimationReport, EstimatorConfig, Variant};

/// Largest sample the page may request, to keep the tab responsive.
pub const MAX_N: usize = 200_000;
const MAX_POINTS: usize = 400;

fn check_n(n: usize) -> Result<(), String> {
    if n > MAX_N {
        return Err(format!("n = {n} exceeds the demo limit of {MAX_N}"));
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

/// One plotted row: the first raw covariate, the true effect, the estimate.
#[derive(Debug, Serialize)]
pub struct EffectPoint {
    pub x0: f64,
    pub theta: f64,
    pub estimate: f64,
}

#[derive(Debug, Serialize)]
pub struct EstimateView {
    pub truth: GroundTruth,
    pub report: EstimationReport,
    pub points: Vec<EffectPoint>,
}

pub fn estimate_json(family: &str, n: usize, seed: u64, variant: &str, space: &str) -> Result<String, String> {
    check_n(n)?;
    let err = |e: ivcate::error::Error| e.to_string();
    let family = DgpFamily::parse(family).map_err(err)?;
    let sim = generate(&DgpSpec::new(family, n, seed)).map_err(err)?;
    let space = match space {
        "constant" => HypothesisSpace::Constant,
        "linear" => HypothesisSpace::Linear,
        "lasso" => HypothesisSpace::LassoLinear,
        other => return Err(format!("unknown space `{other}` (expected constant, linear or lasso)")),
    };
    let cfg = EstimatorConfig {
        variant: Variant::parse(variant).map_err(err)?,
        space,
        seed,
        ..EstimatorConfig::default()
    };
    let out = run(&sim.data, &cfg).map_err(err)?;
    let step = sim.data.n().div_ceil(MAX_POINTS);
    let points = match &out.report.model {
        Some(model) => (0..sim.data.n())
            .step_by(step)
            .map(|i| EffectPoint {
                x0: sim.raw_x[(i, 0)],
                theta: sim.truth.theta[i],
                estimate: model.predict_row(&sim.data.row(i)),
            })
            .collect(),
        None => Vec::new(),
    };
    to_json(&EstimateView {
        truth: sim.truth,
        report: out.report,
        points,
    })
}

pub fn coverage_json(n: usize, replicates: usize, seed: u64) -> Result<String, String> {
    check_n(n)?;
    let reports: Vec<CoverageReport> = run_coverage(&CoverageConfig {
        dgp: DgpSpec::new(DgpFamily::Coverage, n, seed),
        estimator: EstimatorConfig::default(),
        replicates,
        seed,
    })
    .map_err(|e| e.to_string())?;
    to_json(&reports)
}

pub fn orthogonality_json(n: usize, seed: u64) -> Result<String, String> {
    check_n(n)?;
    let reports: Vec<OrthogonalityReport> =
        orthogonality_suite(n, seed, &default_t_grid()).map_err(|e| e.to_string())?;
    to_json(&reports)
}

/// Draws a synthetic sample, fits one estimator, and returns the report with
/// a thinned set of true and estimated effects for plotting.
#[wasm_bindgen]
pub fn simulate_and_estimate(family: &str, n: usize, seed: u32, variant: &str, space: &str) -> Result<String, JsError> {
    estimate_json(family, n, u64::from(seed), variant, space).map_err(|e| JsError::new(&e))
}

/// Interval coverage of DMLATEIV and DRIV over repeated samples of the
/// coverage design.
#[wasm_bindgen]
pub fn coverage_experiment(n: usize, replicates: usize, seed: u32) -> Result<String, JsError> {
    coverage_json(n, replicates, u64::from(seed)).map_err(|e| JsError::new(&e))
}

/// Final-stage displacement as each nuisance is perturbed, for every loss
/// and direction pair.
#[wasm_bindgen]
pub fn orthogonality_curves(n: usize, seed: u32) -> Result<String, JsError> {
    orthogonality_json(n, u64::from(seed)).map_err(|e| JsError::new(&e))
}
