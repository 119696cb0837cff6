//! Interchangeable regression and classification learners.
//!
//! Every nuisance regression and every non-linear final stage goes through
//! [`fit_regressor`] / [`fit_classifier`]. Fits are deterministic given the
//! spec (which carries any seed) and the data. Sample weights are rescaled to
//! mean one before fitting, so multiplying all weights by a constant never
//! changes a fit.

mod ensemble;
mod linear;
mod logistic;
pub mod tree;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{make_splits, select_rows};
use crate::error::{Error, Result};

pub use ensemble::{Link, TreeEnsemble};
pub(crate) use linear::{fit_lasso, fit_ridge, solve_spd};

/// Classifier outputs are clipped into `[PROB_CLIP, 1 - PROB_CLIP]`.
pub const PROB_CLIP: f64 = 1e-6;

/// Folds used when a spec carries a penalty grid.
pub const CV_FOLDS: usize = 3;

fn default_cv_seed() -> u64 {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_child_weight: f64,
    pub gamma: f64,
    pub reg_lambda: f64,
    pub validation_fraction: f64,
    pub early_stopping_rounds: usize,
    /// Sample size at which `min_child_weight` applies in full; smaller
    /// samples scale it down proportionally (never below one).
    pub reference_n: usize,
    pub max_bins: usize,
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_child_weight: 20.0,
            gamma: 0.1,
            reg_lambda: 1.0,
            validation_fraction: 0.1,
            early_stopping_rounds: 10,
            reference_n: 100_000,
            max_bins: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    /// `None` resolves to `max(50, n / 50)` at fit time.
    pub min_leaf: Option<usize>,
    /// Fraction of features offered to each tree.
    pub max_features: f64,
    pub bootstrap: bool,
    pub max_bins: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 1,
            min_leaf: None,
            max_features: 1.0 / 3.0,
            bootstrap: true,
            max_bins: 64,
            seed: 0,
        }
    }
}

/// Learner kind plus hyperparameters. A non-empty `cv_grid` selects the
/// penalty by [`CV_FOLDS`]-fold cross-validation at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Ols,
    Ridge {
        lambda: f64,
        #[serde(default)]
        cv_grid: Vec<f64>,
    },
    Lasso {
        lambda: f64,
        #[serde(default)]
        cv_grid: Vec<f64>,
    },
    LogisticL2 {
        lambda: f64,
        #[serde(default)]
        cv_grid: Vec<f64>,
    },
    GbtRegressor(GbtParams),
    GbtClassifier(GbtParams),
    ShallowForest(ForestParams),
}

impl LearnerSpec {
    pub fn ridge(lambda: f64) -> Self {
        LearnerSpec::Ridge {
            lambda,
            cv_grid: Vec::new(),
        }
    }

    pub fn lasso(lambda: f64) -> Self {
        LearnerSpec::Lasso {
            lambda,
            cv_grid: Vec::new(),
        }
    }

    pub fn logistic(lambda: f64) -> Self {
        LearnerSpec::LogisticL2 {
            lambda,
            cv_grid: Vec::new(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::Ols => "ols",
            LearnerSpec::Ridge { .. } => "ridge",
            LearnerSpec::Lasso { .. } => "lasso",
            LearnerSpec::LogisticL2 { .. } => "logistic_l2",
            LearnerSpec::GbtRegressor(_) => "gbt_regressor",
            LearnerSpec::GbtClassifier(_) => "gbt_classifier",
            LearnerSpec::ShallowForest(_) => "shallow_forest",
        }
    }

    pub fn is_classifier(&self) -> bool {
        matches!(self, LearnerSpec::LogisticL2 { .. } | LearnerSpec::GbtClassifier(_))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Argument(msg));
        match self {
            LearnerSpec::Ols => Ok(()),
            LearnerSpec::Ridge { lambda, cv_grid }
            | LearnerSpec::Lasso { lambda, cv_grid }
            | LearnerSpec::LogisticL2 { lambda, cv_grid } => {
                if !(*lambda >= 0.0 && lambda.is_finite())
                    || cv_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite()))
                {
                    return bad(format!("{}: penalties must be finite and >= 0", self.name()));
                }
                Ok(())
            }
            LearnerSpec::GbtRegressor(p) | LearnerSpec::GbtClassifier(p) => {
                if p.n_estimators == 0
                    || p.max_depth == 0
                    || !(p.learning_rate > 0.0 && p.learning_rate <= 1.0)
                    || p.min_child_weight < 0.0
                    || p.gamma < 0.0
                    || p.reg_lambda < 0.0
                    || !(0.0..0.5).contains(&p.validation_fraction)
                    || p.reference_n == 0
                    || p.max_bins < 2
                {
                    return bad(format!("{}: hyperparameter out of range", self.name()));
                }
                Ok(())
            }
            LearnerSpec::ShallowForest(p) => {
                if p.n_trees == 0
                    || p.max_depth == 0
                    || p.min_leaf == Some(0)
                    || !(p.max_features > 0.0 && p.max_features <= 1.0)
                    || p.max_bins < 2
                {
                    return bad("shallow_forest: hyperparameter out of range".into());
                }
                Ok(())
            }
        }
    }

    fn cv_grid(&self) -> Option<Vec<LearnerSpec>> {
        let (grid, make): (&Vec<f64>, fn(f64) -> LearnerSpec) = match self {
            LearnerSpec::Ridge { cv_grid, .. } => (cv_grid, LearnerSpec::ridge),
            LearnerSpec::Lasso { cv_grid, .. } => (cv_grid, LearnerSpec::lasso),
            LearnerSpec::LogisticL2 { cv_grid, .. } => (cv_grid, LearnerSpec::logistic),
            _ => return None,
        };
        (!grid.is_empty()).then(|| grid.iter().map(|&l| make(l)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelParams {
    Constant { value: f64 },
    Linear { intercept: f64, coef: Vec<f64> },
    Logistic { intercept: f64, coef: Vec<f64> },
    Ensemble(TreeEnsemble),
}

/// A fitted learner. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    /// The resolved spec (after any penalty selection).
    pub spec: LearnerSpec,
    pub params: ModelParams,
    pub feature_dim: usize,
}

impl FittedModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.feature_dim);
        let raw = match &self.params {
            ModelParams::Constant { value } => *value,
            ModelParams::Linear { intercept, coef } => {
                intercept + coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
            }
            ModelParams::Logistic { intercept, coef } => logistic::sigmoid(
                intercept + coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>(),
            ),
            ModelParams::Ensemble(e) => e.predict_row(x),
        };
        if self.spec.is_classifier() {
            raw.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
        } else {
            raw
        }
    }

    /// Predictions for every row of `x`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.feature_dim {
            return Err(Error::Argument(format!(
                "model expects {} features, got {}",
                self.feature_dim,
                x.ncols()
            )));
        }
        let mut row = vec![0.0; x.ncols()];
        Ok((0..x.nrows())
            .map(|i| {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = x[(i, c)];
                }
                self.predict_row(&row)
            })
            .collect())
    }

    pub fn coefficients(&self) -> Option<(f64, &[f64])> {
        match &self.params {
            ModelParams::Linear { intercept, coef } | ModelParams::Logistic { intercept, coef } => {
                Some((*intercept, coef))
            }
            _ => None,
        }
    }

    /// Split-gain importance for tree models.
    pub fn feature_importance(&self) -> Option<&[f64]> {
        match &self.params {
            ModelParams::Ensemble(e) => Some(&e.importance),
            _ => None,
        }
    }
}

fn check_inputs(x: &DMatrix<f64>, y: &[f64], w: Option<&[f64]>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Argument(format!(
            "{} rows in X but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::Argument("cannot fit on an empty sample".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite value in learner inputs".into()));
    }
    if let Some(w) = w {
        if w.len() != y.len() {
            return Err(Error::Argument(format!(
                "{} weights for {} rows",
                w.len(),
                y.len()
            )));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Argument("weights must be finite and >= 0".into()));
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Argument("weights sum to zero".into()));
        }
    }
    Ok(())
}

/// Drop zero-weight rows and rescale the rest to mean one.
fn prepare_weights(
    x: &DMatrix<f64>,
    y: &[f64],
    w: Option<&[f64]>,
) -> (Option<(DMatrix<f64>, Vec<f64>)>, Vec<f64>) {
    match w {
        None => (None, vec![1.0; y.len()]),
        Some(w) => {
            let keep: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
            let mean = keep.iter().map(|&i| w[i]).sum::<f64>() / keep.len() as f64;
            let wk: Vec<f64> = keep.iter().map(|&i| w[i] / mean).collect();
            if keep.len() == w.len() {
                (None, wk)
            } else {
                let xs = select_rows(x, &keep);
                let ys = keep.iter().map(|&i| y[i]).collect();
                (Some((xs, ys)), wk)
            }
        }
    }
}

/// Fit a regressor minimizing weighted square loss plus the penalty in `spec`.
pub fn fit_regressor(
    spec: &LearnerSpec,
    x: &DMatrix<f64>,
    y: &[f64],
    w: Option<&[f64]>,
) -> Result<FittedModel> {
    spec.validate()?;
    if spec.is_classifier() {
        return Err(Error::Argument(format!(
            "{} is a classifier; use fit_classifier",
            spec.name()
        )));
    }
    check_inputs(x, y, w)?;
    let (kept, weights) = prepare_weights(x, y, w);
    let (x, y) = match &kept {
        Some((xs, ys)) => (xs, ys.as_slice()),
        None => (x, y),
    };
    if let Some(grid) = spec.cv_grid() {
        let best = cross_validate_weighted(&grid, x, y, Some(&weights), CV_FOLDS, default_cv_seed())?;
        return fit_regressor(&best, x, y, Some(&weights));
    }
    let d = x.ncols();
    let params = match spec {
        LearnerSpec::Ols => {
            let (intercept, coef) = fit_ridge(x, y, &weights, 0.0)?;
            ModelParams::Linear { intercept, coef }
        }
        LearnerSpec::Ridge { lambda, .. } => {
            let (intercept, coef) = fit_ridge(x, y, &weights, *lambda)?;
            ModelParams::Linear { intercept, coef }
        }
        LearnerSpec::Lasso { lambda, .. } => {
            let (intercept, coef) = fit_lasso(x, y, &weights, *lambda)?;
            ModelParams::Linear { intercept, coef }
        }
        LearnerSpec::GbtRegressor(p) => {
            ModelParams::Ensemble(ensemble::fit_gbt(x, y, &weights, p, Link::Identity))
        }
        LearnerSpec::ShallowForest(p) => {
            ModelParams::Ensemble(ensemble::fit_forest(x, y, &weights, p))
        }
        LearnerSpec::LogisticL2 { .. } | LearnerSpec::GbtClassifier(_) => unreachable!(),
    };
    Ok(FittedModel {
        spec: spec.clone(),
        params,
        feature_dim: d,
    })
}

/// Fit a probabilistic classifier on 0/1 labels. A single observed class
/// yields the constant model at the clipped class frequency.
pub fn fit_classifier(spec: &LearnerSpec, x: &DMatrix<f64>, y: &[f64]) -> Result<FittedModel> {
    fit_classifier_weighted(spec, x, y, None)
}

pub fn fit_classifier_weighted(
    spec: &LearnerSpec,
    x: &DMatrix<f64>,
    y: &[f64],
    w: Option<&[f64]>,
) -> Result<FittedModel> {
    spec.validate()?;
    if !spec.is_classifier() {
        return Err(Error::Argument(format!("{} is not a classifier", spec.name())));
    }
    check_inputs(x, y, w)?;
    if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Argument(format!(
            "classifier labels must be 0/1; row {i} holds {}",
            y[i]
        )));
    }
    let (kept, weights) = prepare_weights(x, y, w);
    let (x, y) = match &kept {
        Some((xs, ys)) => (xs, ys.as_slice()),
        None => (x, y),
    };
    let d = x.ncols();
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == y.len() {
        let value = if ones == 0 { PROB_CLIP } else { 1.0 - PROB_CLIP };
        return Ok(FittedModel {
            spec: spec.clone(),
            params: ModelParams::Constant { value },
            feature_dim: d,
        });
    }
    if let Some(grid) = spec.cv_grid() {
        let best = cross_validate_weighted(&grid, x, y, Some(&weights), CV_FOLDS, default_cv_seed())?;
        return fit_classifier_weighted(&best, x, y, Some(&weights));
    }
    let params = match spec {
        LearnerSpec::LogisticL2 { lambda, .. } => {
            let (intercept, coef) = logistic::fit_logistic(x, y, &weights, *lambda)?;
            ModelParams::Logistic { intercept, coef }
        }
        LearnerSpec::GbtClassifier(p) => {
            ModelParams::Ensemble(ensemble::fit_gbt(x, y, &weights, p, Link::Logistic))
        }
        _ => unreachable!(),
    };
    Ok(FittedModel {
        spec: spec.clone(),
        params,
        feature_dim: d,
    })
}

/// Fit with the regressor or classifier entry point, whichever `spec` names.
pub fn fit_learner(
    spec: &LearnerSpec,
    x: &DMatrix<f64>,
    y: &[f64],
    w: Option<&[f64]>,
) -> Result<FittedModel> {
    if spec.is_classifier() {
        fit_classifier_weighted(spec, x, y, w)
    } else {
        fit_regressor(spec, x, y, w)
    }
}

/// Mean out-of-fold loss of `spec`: weighted RMSE for regressors, weighted
/// log-loss for classifiers.
pub fn out_of_fold_loss(
    spec: &LearnerSpec,
    x: &DMatrix<f64>,
    y: &[f64],
    w: Option<&[f64]>,
    k: usize,
    seed: u64,
) -> Result<f64> {
    let plan = make_splits(y.len(), k, seed)?;
    let mut total = 0.0;
    for fold in 0..k {
        let train = plan.train_rows(fold);
        let test = plan.test_rows(fold);
        let xt = select_rows(x, &train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let wt: Option<Vec<f64>> = w.map(|w| train.iter().map(|&i| w[i]).collect());
        if wt.as_ref().is_some_and(|w| w.iter().sum::<f64>() <= 0.0) {
            continue;
        }
        let model = fit_learner(spec, &xt, &yt, wt.as_deref())?;
        let preds = model.predict(&select_rows(x, &test))?;
        let (mut num, mut den) = (0.0, 0.0);
        for (p, &i) in preds.iter().zip(&test) {
            let wi = w.map_or(1.0, |w| w[i]);
            let l = if spec.is_classifier() {
                -(y[i] * p.ln() + (1.0 - y[i]) * (1.0 - p).ln())
            } else {
                (y[i] - p).powi(2)
            };
            num += wi * l;
            den += wi;
        }
        let fold_loss = if den > 0.0 { num / den } else { 0.0 };
        total += if spec.is_classifier() { fold_loss } else { fold_loss.sqrt() };
    }
    Ok(total / k as f64)
}

/// Grid element with the smallest mean out-of-fold loss; ties go to the
/// earliest entry.
pub fn cross_validate(
    grid: &[LearnerSpec],
    x: &DMatrix<f64>,
    y: &[f64],
    k: usize,
) -> Result<LearnerSpec> {
    cross_validate_weighted(grid, x, y, None, k, default_cv_seed())
}

pub fn cross_validate_weighted(
    grid: &[LearnerSpec],
    x: &DMatrix<f64>,
    y: &[f64],
    w: Option<&[f64]>,
    k: usize,
    seed: u64,
) -> Result<LearnerSpec> {
    if grid.is_empty() {
        return Err(Error::Argument("cross-validation grid is empty".into()));
    }
    if k < 2 {
        return Err(Error::Argument(format!("need at least 2 folds, got {k}")));
    }
    if k > y.len() {
        return Err(Error::Argument(format!("{k} folds for {} rows", y.len())));
    }
    if grid.len() == 1 {
        return Ok(grid[0].clone());
    }
    let mut best = 0;
    let mut best_loss = f64::INFINITY;
    for (i, spec) in grid.iter().enumerate() {
        let loss = out_of_fold_loss(spec, x, y, w, k, seed)?;
        if loss < best_loss {
            best_loss = loss;
            best = i;
        }
    }
    Ok(grid[best].clone())
}
