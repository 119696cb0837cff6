//! One-call estimation: nuisances, residuals, preliminary effect, final stage,
//! and intervals, driven by an [`EstimatorConfig`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ate::{estimate_dmlateiv, estimate_dr_ate, EstimateWithCI};
use crate::cate::{CateModel, HypothesisSpace};
use crate::crossfit::{compute_residuals, NuisanceSet, NuisanceSpecs, Residuals};
use crate::dataset::{make_splits, IvDataset};
use crate::dmliv::{dmliv_reduction, fit_dmliv_on, overlap_diagnostic, OverlapDiagnostics};
use crate::driv::{
    cross_fit_theta_pre, driv_pseudo_outcome, driv_rw_reduction, fit_driv, fit_driv_rw,
    fit_nuisances_with, fit_projected_driv_rw, projected_reduction, NuisanceMode, PseudoOutcome,
};
use crate::error::{Error, Result};
use crate::inference::{wls_robust, LinearProjectionResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Dmlateiv,
    Dmliv,
    Driv,
    DrivRw,
    ProjectedDrivRw,
}

impl Variant {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "dmlateiv" => Ok(Variant::Dmlateiv),
            "dmliv" => Ok(Variant::Dmliv),
            "driv" => Ok(Variant::Driv),
            "driv_rw" => Ok(Variant::DrivRw),
            "projected_driv_rw" => Ok(Variant::ProjectedDrivRw),
            other => Err(Error::Argument(format!(
                "unknown variant `{other}` (expected dmlateiv, dmliv, driv, driv_rw or projected_driv_rw)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub variant: Variant,
    pub space: HypothesisSpace,
    /// Space of the cross-fitted DMLIV preliminary estimate.
    pub pre_space: HypothesisSpace,
    pub nuisances: NuisanceSpecs,
    pub mode: NuisanceMode,
    pub folds: usize,
    pub seed: u64,
    pub level: f64,
    /// `None` selects the data-relative default.
    pub beta_min: Option<f64>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Driv,
            space: HypothesisSpace::Constant,
            pre_space: HypothesisSpace::Linear,
            nuisances: NuisanceSpecs::linear(),
            mode: NuisanceMode::default(),
            folds: 2,
            seed: 0,
            level: 0.95,
            beta_min: None,
        }
    }
}

/// Summary of one estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub variant: Variant,
    pub n: usize,
    pub feature_names: Vec<String>,
    /// Doubly robust average effect (absent for DMLATEIV).
    pub ate: Option<EstimateWithCI>,
    /// Constant-effect moment estimator on the same nuisances.
    pub dmlateiv: EstimateWithCI,
    pub model: Option<CateModel>,
    /// Coefficients of a linear final stage with robust intervals.
    pub projection: Option<LinearProjectionResult>,
    pub overlap: OverlapDiagnostics,
    pub clip_count: usize,
    pub beta_min: Option<f64>,
}

/// Everything computed along the way, for callers that need more than the
/// report.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: EstimationReport,
    pub nuisances: NuisanceSet,
    pub residuals: Residuals,
    pub pseudo: Option<PseudoOutcome>,
}

fn select_columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), cols.len(), |r, c| x[(r, cols[c])])
}

pub fn run(data: &IvDataset, cfg: &EstimatorConfig) -> Result<PipelineOutput> {
    cfg.space.validate(data.d())?;
    cfg.pre_space.validate(data.d())?;
    let plan = make_splits(data.n(), cfg.folds, cfg.seed)?;
    let mut nuis = fit_nuisances_with(data, &cfg.nuisances, &plan, cfg.mode)?;
    let overlap = overlap_diagnostic(&nuis, &data.x)?;
    let res = compute_residuals(data, &nuis)?;
    let dmlateiv = estimate_dmlateiv(&res, cfg.level)?;
    let feature_names = data.column_names.clone();
    if cfg.variant == Variant::Dmlateiv {
        return Ok(PipelineOutput {
            report: EstimationReport {
                variant: cfg.variant,
                n: data.n(),
                feature_names,
                ate: None,
                dmlateiv,
                model: None,
                projection: None,
                overlap,
                clip_count: 0,
                beta_min: None,
            },
            nuisances: nuis,
            residuals: res,
            pseudo: None,
        });
    }
    let theta_pre = cross_fit_theta_pre(data, &cfg.nuisances, &plan, cfg.mode, &cfg.pre_space)?;
    nuis.theta_pre = Some(theta_pre);
    let pseudo = driv_pseudo_outcome(&res, &nuis, cfg.beta_min)?;
    let ate = estimate_dr_ate(&pseudo.y_dr, cfg.level)?;
    let (model, labels, weights) = match cfg.variant {
        Variant::Dmliv => {
            let (l, w) = dmliv_reduction(&res);
            (fit_dmliv_on(&data.x, &res, &cfg.space)?, l, Some(w))
        }
        Variant::Driv => (fit_driv(&pseudo, &data.x, &cfg.space)?, pseudo.y_dr.clone(), None),
        Variant::DrivRw => {
            let (l, w) = driv_rw_reduction(&res, &nuis)?;
            (fit_driv_rw(&data.x, &res, &nuis, &cfg.space)?, l, Some(w))
        }
        Variant::ProjectedDrivRw => {
            let (l, w) = projected_reduction(&res, &nuis)?;
            (fit_projected_driv_rw(&data.x, &res, &nuis, &cfg.space)?, l, Some(w))
        }
        Variant::Dmlateiv => unreachable!(),
    };
    let projection = match &cfg.space {
        HypothesisSpace::Linear | HypothesisSpace::LinearSubset { .. } => {
            let cols = cfg.space.linear_features(data.d()).unwrap();
            let mut p = wls_robust(
                &labels,
                &select_columns(&data.x, &cols),
                weights.as_deref(),
                true,
                cfg.level,
            )?;
            for (j, &c) in cols.iter().enumerate() {
                p.names[j + 1] = feature_names[c].clone();
            }
            Some(p)
        }
        _ => None,
    };
    Ok(PipelineOutput {
        report: EstimationReport {
            variant: cfg.variant,
            n: data.n(),
            feature_names,
            ate: Some(ate),
            dmlateiv,
            model: Some(model),
            projection,
            overlap,
            clip_count: pseudo.clip_count,
            beta_min: Some(pseudo.beta_min),
        },
        nuisances: nuis,
        residuals: res,
        pseudo: Some(pseudo),
    })
}

pub fn estimate(data: &IvDataset, cfg: &EstimatorConfig) -> Result<EstimationReport> {
    run(data, cfg).map(|o| o.report)
}
