//! Monte Carlo coverage experiments and numerical orthogonality checks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ate::EstimateWithCI;
use crate::cate::CateModel;
use crate::dgp::{generate, DgpSpec, Simulation};
use crate::error::{Error, Result};
use crate::par;
use crate::pipeline::{run, EstimatorConfig};

pub const MIN_REPLICATES: usize = 10;

/// Seed of replicate `r` under master seed `seed`.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_mul(6_364_136_223_846_793_005)
        .wrapping_add(1_442_695_040_888_963_407)
        .wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub seed: u64,
    pub true_ate: f64,
    pub point: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub estimator: String,
    pub replicates: usize,
    pub failures: usize,
    pub failure_messages: Vec<String>,
    pub true_ate: f64,
    pub mean_point: f64,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_ci_width: f64,
    pub rows: Vec<ReplicateRow>,
}

impl CoverageReport {
    fn aggregate(estimator: &str, rows: Vec<ReplicateRow>, failures: Vec<String>) -> Self {
        let m = rows.len().max(1) as f64;
        let mean = |f: &dyn Fn(&ReplicateRow) -> f64| rows.iter().map(f).sum::<f64>() / m;
        let true_ate = mean(&|r| r.true_ate);
        let mean_point = mean(&|r| r.point);
        Self {
            estimator: estimator.to_string(),
            replicates: rows.len(),
            failures: failures.len(),
            failure_messages: failures,
            true_ate,
            mean_point,
            bias: mean(&|r| r.point - r.true_ate),
            rmse: mean(&|r| (r.point - r.true_ate).powi(2)).sqrt(),
            coverage: mean(&|r| f64::from(u8::from(r.covered))),
            mean_ci_width: mean(&|r| r.ci_high - r.ci_low),
            rows,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub dgp: DgpSpec,
    pub estimator: EstimatorConfig,
    pub replicates: usize,
    pub seed: u64,
}

fn row(r: usize, seed: u64, truth: f64, e: &EstimateWithCI) -> ReplicateRow {
    ReplicateRow {
        replicate: r,
        seed,
        true_ate: truth,
        point: e.point,
        stderr: e.stderr,
        ci_low: e.ci_low,
        ci_high: e.ci_high,
        covered: e.covers(truth),
    }
}

/// Replicate the DGP `replicates` times and score DMLATEIV and the doubly
/// robust average effect against the known ATE. Failed replicates are
/// counted and excluded.
pub fn run_coverage(cfg: &CoverageConfig) -> Result<Vec<CoverageReport>> {
    if cfg.replicates < MIN_REPLICATES {
        return Err(Error::Argument(format!(
            "need at least {MIN_REPLICATES} replicates, got {}",
            cfg.replicates
        )));
    }
    cfg.dgp.validate()?;
    let outcomes = par::map(cfg.replicates, |r| {
        let seed = replicate_seed(cfg.seed, r);
        let dgp = DgpSpec {
            seed,
            ..cfg.dgp.clone()
        };
        let sim = generate(&dgp)?;
        let out = run(&sim.data, &cfg.estimator)?;
        let truth = sim.truth.true_ate;
        let dr = out.report.ate.as_ref().map(|e| row(r, seed, truth, e));
        Ok::<_, Error>((row(r, seed, truth, &out.report.dmlateiv), dr))
    });
    let mut dml = Vec::new();
    let mut dr = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok((a, b)) => {
                dml.push(a);
                if let Some(b) = b {
                    dr.push(b);
                }
            }
            Err(e) => failures.push(format!("replicate {r}: {e}")),
        }
    }
    let mut reports = vec![CoverageReport::aggregate("dmlateiv", dml, failures.clone())];
    if !dr.is_empty() {
        reports.push(CoverageReport::aggregate("driv", dr, failures));
    }
    Ok(reports)
}

/// Mean squared difference between a fitted effect model and the truth.
pub fn cate_mse(model: &CateModel, x_eval: &DMatrix<f64>, theta_true: &[f64]) -> Result<f64> {
    let pred = model.predict(x_eval)?;
    if pred.len() != theta_true.len() {
        return Err(Error::Argument("evaluation rows and truth differ in length".into()));
    }
    Ok(pred
        .iter()
        .zip(theta_true)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    L1,
    L2,
    L2Rw,
    L2PiRw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Q,
    P,
    R,
    H,
    ThetaPre,
    Beta,
    V,
}

impl Loss {
    pub fn name(self) -> &'static str {
        match self {
            Loss::L1 => "L1",
            Loss::L2 => "L2",
            Loss::L2Rw => "L2_rw",
            Loss::L2PiRw => "L2_pi_rw",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "L1" | "l1" => Ok(Loss::L1),
            "L2" | "l2" => Ok(Loss::L2),
            "L2_rw" | "l2_rw" => Ok(Loss::L2Rw),
            "L2_pi_rw" | "l2_pi_rw" => Ok(Loss::L2PiRw),
            other => Err(Error::Argument(format!("unknown loss `{other}`"))),
        }
    }

    /// Nuisances the loss depends on.
    pub fn directions(self) -> &'static [Direction] {
        match self {
            Loss::L1 => &[Direction::Q, Direction::P, Direction::H],
            Loss::L2 => &[
                Direction::ThetaPre,
                Direction::Beta,
                Direction::P,
                Direction::Q,
                Direction::R,
            ],
            Loss::L2Rw => &[Direction::ThetaPre, Direction::Beta, Direction::Q],
            Loss::L2PiRw => &[Direction::ThetaPre, Direction::V],
        }
    }

    /// Whether the loss is orthogonal to `dir` (the only exception is `L1`
    /// with respect to `h`).
    pub fn orthogonal_to(self, dir: Direction) -> bool {
        !(self == Loss::L1 && dir == Direction::H)
    }
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Q => "q",
            Direction::P => "p",
            Direction::R => "r",
            Direction::H => "h",
            Direction::ThetaPre => "theta_pre",
            Direction::Beta => "beta",
            Direction::V => "v",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "q" => Ok(Direction::Q),
            "p" => Ok(Direction::P),
            "r" => Ok(Direction::R),
            "h" => Ok(Direction::H),
            "theta_pre" => Ok(Direction::ThetaPre),
            "beta" => Ok(Direction::Beta),
            "v" | "V" => Ok(Direction::V),
            other => Err(Error::Argument(format!("unknown nuisance direction `{other}`"))),
        }
    }
}

/// The full loss-by-direction test matrix (13 pairs).
pub fn orthogonality_matrix() -> Vec<(Loss, Direction)> {
    [Loss::L1, Loss::L2, Loss::L2Rw, Loss::L2PiRw]
        .iter()
        .flat_map(|&l| l.directions().iter().map(move |&d| (l, d)))
        .collect()
}

/// Default perturbation sizes: 0.002 to 0.2.
pub fn default_t_grid() -> Vec<f64> {
    vec![0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2]
}

/// Displacements at or below this are treated as zero.
pub const FLAT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityReport {
    pub loss: Loss,
    pub direction: Direction,
    pub t_grid: Vec<f64>,
    pub displacements: Vec<f64>,
    /// Log-log slope of displacement against `t`; `None` when flat.
    pub slope: Option<f64>,
    pub flat: bool,
    pub expected_orthogonal: bool,
    pub pass: bool,
}

/// Minimum slope accepted as second order.
pub const ORTHOGONAL_SLOPE: f64 = 1.8;
/// Accepted slope range for a first-order (non-orthogonal) direction.
pub const FIRST_ORDER_SLOPE: (f64, f64) = (0.8, 1.2);

fn log_log_slope(t: &[f64], d: &[f64], floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(d)
        .filter(|(_, &d)| d > floor)
        .map(|(&t, &d)| (t.ln(), d.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Population-level final-stage refit under perturbed nuisances.
///
/// The DGP's exact conditional moments given `X` replace sample averages
/// over `(Y, T, Z)`, so the fit at `t = 0` recovers `theta_0` exactly and any
/// displacement is due to the perturbation alone. The final stage is the
/// linear space spanned by `theta_0`'s own raw covariates (`basis`).
pub struct OrthogonalityProblem<'a> {
    pub sim: &'a Simulation,
    /// Raw covariate columns spanning `theta_0`.
    pub basis: Vec<usize>,
    /// Raw covariate column driving the perturbation direction.
    pub direction_feature: usize,
}

impl OrthogonalityProblem<'_> {
    fn direction(&self) -> Vec<f64> {
        let col = self.sim.raw_x.column(self.direction_feature);
        let (lo, hi) = col
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        col.iter()
            .map(|&v| crate::dgp::logistic(4.0 * (v - lo) / span - 2.0))
            .collect()
    }

    /// Weighted least squares on `[1, basis]` by Householder QR of the
    /// row-scaled design.
    fn fit(&self, labels: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
        let x = &self.sim.raw_x;
        let k = self.basis.len() + 1;
        let design = |r: usize, c: usize| if c == 0 { 1.0 } else { x[(r, self.basis[c - 1])] };
        let a = DMatrix::from_fn(x.nrows(), k, |r, c| weights[r].sqrt() * design(r, c));
        let b = DVector::from_iterator(x.nrows(), (0..x.nrows()).map(|r| weights[r].sqrt() * labels[r]));
        let qr = a.qr();
        let qtb = qr.q().transpose() * b;
        let coef = qr
            .r()
            .solve_upper_triangular(&qtb)
            .ok_or_else(|| Error::Numerical("final-stage basis is rank deficient".into()))?;
        Ok((0..x.nrows())
            .map(|r| (0..k).map(|c| coef[c] * design(r, c)).sum())
            .collect())
    }

    /// Fitted `theta` at perturbation size `t` along `dir`.
    pub fn refit(&self, loss: Loss, dir: Direction, t: f64) -> Result<Vec<f64>> {
        let o = &self.sim.oracle;
        let n = o.n();
        let nu = self.direction();
        let theta0 = &self.sim.truth.theta;
        let base = o.nuisances(&self.sim.data.z);
        let beta0 = o.beta();
        let gap: Vec<f64> = (0..n).map(|i| o.h1[i] - o.h0[i]).collect();
        let scale = match dir {
            Direction::Q => rms(&base.q),
            Direction::P => rms(&base.p),
            Direction::R => rms(&base.r),
            Direction::H => rms(&gap),
            Direction::ThetaPre => rms(theta0),
            Direction::Beta => rms(&beta0),
            Direction::V => rms(&base.v),
        };
        let bump = |d: Direction, i: usize| if d == dir { t * scale * nu[i] } else { 0.0 };
        let mut labels = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            let pi = o.pi[i];
            let q = base.q[i] + bump(Direction::Q, i);
            let p = base.p[i] + bump(Direction::P, i);
            let r = base.r[i] + bump(Direction::R, i);
            let pre = theta0[i] + bump(Direction::ThetaPre, i);
            let beta = beta0[i] + bump(Direction::Beta, i);
            let v = base.v[i] + bump(Direction::V, i);
            // (probability, E[Y|z,X], E[T|z,X], z, h_hat(z,X)) for z = 0, 1
            let cells = [
                (1.0 - pi, o.g0[i], o.h0[i], 0.0, o.h0[i]),
                (pi, o.g1[i], o.h1[i], 1.0, o.h1[i] + bump(Direction::H, i)),
            ];
            let (label, weight) = match loss {
                Loss::L1 => {
                    let (mut num, mut den) = (0.0, 0.0);
                    for &(w, g, _, _, hh) in &cells {
                        num += w * (g - q) * (hh - p);
                        den += w * (hh - p).powi(2);
                    }
                    (num / den, den)
                }
                Loss::L2 | Loss::L2Rw => {
                    let m: f64 = cells
                        .iter()
                        .map(|&(w, g, h, z, _)| w * ((g - q) - pre * (h - p)) * (z - r))
                        .sum();
                    let w = if loss == Loss::L2 { 1.0 } else { beta * beta };
                    (pre + m / beta, w)
                }
                Loss::L2PiRw => {
                    let m: f64 = cells
                        .iter()
                        .map(|&(w, g, h, _, hh)| w * ((g - q) - pre * (h - p)) * (hh - p))
                        .sum();
                    (pre + m / v, v * v)
                }
            };
            labels.push(label);
            weights.push(weight);
        }
        self.fit(&labels, &weights)
    }

    pub fn slope(&self, loss: Loss, dir: Direction, t_grid: &[f64]) -> Result<OrthogonalityReport> {
        if !loss.directions().contains(&dir) {
            return Err(Error::Argument(format!(
                "loss {} does not depend on nuisance {}",
                loss.name(),
                dir.name()
            )));
        }
        if t_grid.len() < 4 || t_grid.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::Argument(
                "perturbation grid needs at least 4 positive sizes".into(),
            ));
        }
        let base = self.refit(loss, dir, 0.0)?;
        let mut displacements = Vec::with_capacity(t_grid.len());
        for &t in t_grid {
            let fit = self.refit(loss, dir, t)?;
            let diff: Vec<f64> = fit.iter().zip(&base).map(|(a, b)| a - b).collect();
            displacements.push(rms(&diff));
        }
        let slope = log_log_slope(t_grid, &displacements, FLAT_TOL);
        let flat = slope.is_none();
        let expected_orthogonal = loss.orthogonal_to(dir);
        let pass = if expected_orthogonal {
            slope.is_none_or(|s| s >= ORTHOGONAL_SLOPE)
        } else {
            slope.is_some_and(|s| s >= FIRST_ORDER_SLOPE.0 && s <= FIRST_ORDER_SLOPE.1)
        };
        Ok(OrthogonalityReport {
            loss,
            direction: dir,
            t_grid: t_grid.to_vec(),
            displacements,
            slope,
            flat,
            expected_orthogonal,
            pass,
        })
    }
}

/// Orthogonality check on the coverage DGP (`theta_0` spans raw columns
/// 0 and 7, direction driven by column 0).
pub fn orthogonality_slope(
    loss: Loss,
    dir: Direction,
    n: usize,
    seed: u64,
    t_grid: &[f64],
) -> Result<OrthogonalityReport> {
    let sim = generate(&DgpSpec::new(crate::dgp::DgpFamily::Coverage, n, seed))?;
    OrthogonalityProblem {
        sim: &sim,
        basis: vec![0, 7],
        direction_feature: 0,
    }
    .slope(loss, dir, t_grid)
}

/// All 13 loss/direction pairs on one coverage-DGP sample.
pub fn orthogonality_suite(n: usize, seed: u64, t_grid: &[f64]) -> Result<Vec<OrthogonalityReport>> {
    let sim = generate(&DgpSpec::new(crate::dgp::DgpFamily::Coverage, n, seed))?;
    let problem = OrthogonalityProblem {
        sim: &sim,
        basis: vec![0, 7],
        direction_feature: 0,
    };
    orthogonality_matrix()
        .into_iter()
        .map(|(l, d)| problem.slope(l, d, t_grid))
        .collect()
}
