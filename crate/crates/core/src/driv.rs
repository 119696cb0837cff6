//! Doubly robust final stages.
//!
//! Pseudo-outcome `Y_dr = theta_pre + (Y_res - theta_pre T_res) Z_res / beta`
//! has conditional mean `theta_0(X)` at the true nuisances. DRIV regresses it
//! on `X`; DRIV-RW weights the regression by `beta^2`; Projected-DRIV-RW
//! swaps `Z_res` for `h - p` and `beta` for `V`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ate::{estimate_dr_ate, EstimateWithCI};
use crate::cate::{fit_final_stage, CateModel, HypothesisSpace};
use crate::crossfit::{
    compute_residuals, fit_binary_nuisances, fit_nuisances, NuisanceSet, NuisanceSpecs,
    Residuals, V_FLOOR,
};
use crate::dataset::{make_splits, IvDataset, SplitPlan};
use crate::dmliv::{fit_dmliv_on, overlap_diagnostic, OverlapDiagnostics};
use crate::error::{Error, Result};
use crate::par;

/// Rows with `|beta|` below this get zero weight in DRIV-RW.
pub const BETA_EPS: f64 = 1e-12;

/// Absolute floor on the default clipping threshold.
pub const BETA_MIN_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoOutcome {
    pub y_dr: Vec<f64>,
    /// Rows whose `|beta|` was raised to `beta_min`.
    pub clip_count: usize,
    pub beta_min: f64,
}

/// `max(0.01 median|beta|, 1e-6)`
pub fn default_beta_min(beta: &[f64]) -> f64 {
    if beta.is_empty() {
        return BETA_MIN_FLOOR;
    }
    let mut abs: Vec<f64> = beta.iter().map(|b| b.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let m = abs.len();
    let median = if m % 2 == 1 {
        abs[m / 2]
    } else {
        0.5 * (abs[m / 2 - 1] + abs[m / 2])
    };
    (0.01 * median).max(BETA_MIN_FLOOR)
}

fn require_theta_pre(nuisances: &NuisanceSet) -> Result<&[f64]> {
    nuisances
        .theta_pre
        .as_deref()
        .ok_or_else(|| Error::Config("preliminary effect estimate theta_pre is missing".into()))
}

fn check_lengths(res: &Residuals, nuisances: &NuisanceSet) -> Result<()> {
    if res.n() != nuisances.n()
        || nuisances.theta_pre.as_ref().is_some_and(|t| t.len() != res.n())
    {
        return Err(Error::Argument(format!(
            "residuals cover {} rows, nuisances {}",
            res.n(),
            nuisances.n()
        )));
    }
    Ok(())
}

/// Build `Y_dr`, raising `|beta|` to `beta_min` where needed
/// (`None` selects [`default_beta_min`]).
pub fn driv_pseudo_outcome(
    res: &Residuals,
    nuisances: &NuisanceSet,
    beta_min: Option<f64>,
) -> Result<PseudoOutcome> {
    check_lengths(res, nuisances)?;
    let theta = require_theta_pre(nuisances)?;
    let beta_min = beta_min.unwrap_or_else(|| default_beta_min(&nuisances.beta));
    if !(beta_min > 0.0 && beta_min.is_finite()) {
        return Err(Error::Argument(format!("beta_min must be positive, got {beta_min}")));
    }
    let mut clip_count = 0;
    let y_dr: Vec<f64> = (0..res.n())
        .map(|i| {
            let b = nuisances.beta[i];
            let b = if b.abs() < beta_min {
                clip_count += 1;
                if b < 0.0 {
                    -beta_min
                } else {
                    beta_min
                }
            } else {
                b
            };
            theta[i] + (res.y_res[i] - theta[i] * res.t_res[i]) * res.z_res[i] / b
        })
        .collect();
    if let Some(i) = y_dr.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("pseudo-outcome not finite at row {i}")));
    }
    Ok(PseudoOutcome {
        y_dr,
        clip_count,
        beta_min,
    })
}

/// Unweighted regression of the pseudo-outcome over `space`.
pub fn fit_driv(y_dr: &PseudoOutcome, x: &DMatrix<f64>, space: &HypothesisSpace) -> Result<CateModel> {
    fit_final_stage(x, &y_dr.y_dr, None, space)
}

/// Labels and weights whose weighted square loss equals `L2_rw`.
pub fn driv_rw_reduction(res: &Residuals, nuisances: &NuisanceSet) -> Result<(Vec<f64>, Vec<f64>)> {
    check_lengths(res, nuisances)?;
    let theta = require_theta_pre(nuisances)?;
    Ok((0..res.n())
        .map(|i| {
            let b = nuisances.beta[i];
            if b.abs() < BETA_EPS {
                (0.0, 0.0)
            } else {
                let label = theta[i] + (res.y_res[i] - theta[i] * res.t_res[i]) * res.z_res[i] / b;
                (label, b * b)
            }
        })
        .unzip())
}

/// Labels and weights whose weighted square loss equals `L2_pi_rw`.
pub fn projected_reduction(res: &Residuals, nuisances: &NuisanceSet) -> Result<(Vec<f64>, Vec<f64>)> {
    check_lengths(res, nuisances)?;
    let theta = require_theta_pre(nuisances)?;
    Ok((0..res.n())
        .map(|i| {
            let v = nuisances.v[i];
            if v <= V_FLOOR {
                (0.0, 0.0)
            } else {
                let label =
                    theta[i] + (res.y_res[i] - theta[i] * res.t_res[i]) * res.z_pi_res[i] / v;
                (label, v * v)
            }
        })
        .unzip())
}

/// Empirical `L2_rw(theta)` evaluated directly:
/// `mean((Y_res Z_res - theta_pre (T_res Z_res - beta) - theta beta)^2)`.
pub fn l2_rw_loss(res: &Residuals, nuisances: &NuisanceSet, theta: &[f64]) -> Result<f64> {
    let pre = require_theta_pre(nuisances)?;
    let n = res.n();
    Ok((0..n)
        .map(|i| {
            let b = nuisances.beta[i];
            (res.y_res[i] * res.z_res[i] - pre[i] * (res.t_res[i] * res.z_res[i] - b) - theta[i] * b)
                .powi(2)
        })
        .sum::<f64>()
        / n as f64)
}

pub fn fit_driv_rw(
    x: &DMatrix<f64>,
    res: &Residuals,
    nuisances: &NuisanceSet,
    space: &HypothesisSpace,
) -> Result<CateModel> {
    let (labels, weights) = driv_rw_reduction(res, nuisances)?;
    fit_final_stage(x, &labels, Some(&weights), space)
}

pub fn fit_projected_driv_rw(
    x: &DMatrix<f64>,
    res: &Residuals,
    nuisances: &NuisanceSet,
    space: &HypothesisSpace,
) -> Result<CateModel> {
    let (labels, weights) = projected_reduction(res, nuisances)?;
    fit_final_stage(x, &labels, Some(&weights), space)
}

/// How nuisances are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NuisanceMode {
    /// Every nuisance is learned; `fixed_r` optionally pins `E[Z|X]`.
    General { fixed_r: Option<f64> },
    /// Randomized binary instrument with known `Pr[Z = 1] = r`.
    Binary { r: f64 },
}

impl Default for NuisanceMode {
    fn default() -> Self {
        NuisanceMode::General { fixed_r: None }
    }
}

pub fn fit_nuisances_with(
    data: &IvDataset,
    specs: &NuisanceSpecs,
    plan: &SplitPlan,
    mode: NuisanceMode,
) -> Result<NuisanceSet> {
    match mode {
        NuisanceMode::General { fixed_r } => fit_nuisances(data, specs, plan, fixed_r),
        NuisanceMode::Binary { r } => fit_binary_nuisances(data, specs, plan, r),
    }
}

/// Seed for the nested split inside outer fold `fold`.
fn inner_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(fold as u64 + 1)
}

/// Cross-fitted DMLIV predictions: for each fold, DMLIV is fit on the other
/// folds (with its own 2-way nuisance split) and evaluated on the fold.
pub fn cross_fit_theta_pre(
    data: &IvDataset,
    specs: &NuisanceSpecs,
    plan: &SplitPlan,
    mode: NuisanceMode,
    space: &HypothesisSpace,
) -> Result<Vec<f64>> {
    let parts = par::try_map(plan.k, |k| {
        let train = plan.train_rows(k);
        let test = plan.test_rows(k);
        let sub = data.subset(&train);
        let inner = make_splits(sub.n(), 2, inner_seed(plan.seed, k))?;
        let nuis = fit_nuisances_with(&sub, specs, &inner, mode)?;
        let res = compute_residuals(&sub, &nuis)?;
        let model = fit_dmliv_on(&sub.x, &res, space)?;
        let xs = crate::dataset::select_rows(&data.x, &test);
        Ok((test, model.predict(&xs)?))
    })?;
    let mut out = vec![0.0; data.n()];
    for (rows, preds) in parts {
        for (i, v) in rows.into_iter().zip(preds) {
            out[i] = v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryVariant {
    Dmliv,
    Driv,
    DrivRw,
}

#[derive(Debug, Clone, Serialize)]
pub struct BinaryPipelineResult {
    pub variant: BinaryVariant,
    pub model: CateModel,
    /// Doubly robust mean of the pseudo-outcome.
    pub ate: EstimateWithCI,
    pub clip_count: usize,
    pub beta_min: f64,
    pub overlap: OverlapDiagnostics,
    #[serde(skip)]
    pub nuisances: NuisanceSet,
}

/// End-to-end estimation for a binary treatment and a randomized binary
/// instrument with `Pr[Z = 1] = r`. Only `q` and `h` are learned.
#[allow(clippy::too_many_arguments)]
pub fn binary_iv_pipeline(
    data: &IvDataset,
    specs: &NuisanceSpecs,
    plan: &SplitPlan,
    variant: BinaryVariant,
    space: &HypothesisSpace,
    pre_space: &HypothesisSpace,
    r: f64,
    level: f64,
) -> Result<BinaryPipelineResult> {
    let mode = NuisanceMode::Binary { r };
    let nuis = fit_nuisances_with(data, specs, plan, mode)?;
    let theta_pre = cross_fit_theta_pre(data, specs, plan, mode, pre_space)?;
    let nuis = nuis.with_theta_pre(theta_pre);
    let res = compute_residuals(data, &nuis)?;
    let pseudo = driv_pseudo_outcome(&res, &nuis, None)?;
    let model = match variant {
        BinaryVariant::Dmliv => fit_dmliv_on(&data.x, &res, space)?,
        BinaryVariant::Driv => fit_driv(&pseudo, &data.x, space)?,
        BinaryVariant::DrivRw => fit_driv_rw(&data.x, &res, &nuis, space)?,
    };
    let ate = estimate_dr_ate(&pseudo.y_dr, level)?;
    Ok(BinaryPipelineResult {
        variant,
        model,
        ate,
        clip_count: pseudo.clip_count,
        beta_min: pseudo.beta_min,
        overlap: overlap_diagnostic(&nuis, &data.x)?,
        nuisances: nuis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Residuals, NuisanceSet) {
        let res = Residuals {
            y_res: vec![0.3, -0.2, 0.5, 0.1],
            t_res: vec![0.2, -0.4, 0.1, 0.3],
            z_res: vec![0.5, -0.5, 0.5, -0.5],
            z_pi_res: vec![0.1, -0.1, 0.2, -0.2],
        };
        let n = NuisanceSet::from_parts(
            vec![0.0; 4],
            vec![0.5; 4],
            vec![0.5; 4],
            vec![0.5; 4],
            vec![0.35, 0.25 + 1e-15, 0.3, 0.45],
            vec![0.01; 4],
        )
        .unwrap()
        .with_theta_pre(vec![1.0, 2.0, 0.5, 1.5]);
        (res, n)
    }

    #[test]
    fn tiny_beta_is_clipped_and_counted() {
        let (res, n) = toy();
        let p = driv_pseudo_outcome(&res, &n, Some(0.01)).unwrap();
        assert_eq!(p.clip_count, 1);
        let expect = 2.0 + (-0.2 - 2.0 * -0.4) * -0.5 / 0.01;
        assert!((p.y_dr[1] - expect).abs() < 1e-9);
    }

    #[test]
    fn missing_theta_pre_is_config_error() {
        let (res, mut n) = toy();
        n.theta_pre = None;
        assert!(matches!(
            driv_pseudo_outcome(&res, &n, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn default_beta_min_uses_median() {
        assert_eq!(default_beta_min(&[1.0, -2.0, 3.0]), 0.02);
        assert_eq!(default_beta_min(&[0.0, 0.0]), BETA_MIN_FLOOR);
    }
}
