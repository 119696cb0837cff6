//! Hypothesis spaces for the effect function and the final-stage fit shared
//! by every estimator: a (weighted) square-loss regression of labels on `X`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{
    cross_validate_weighted, fit_regressor, FittedModel, LearnerSpec, CV_FOLDS,
};

/// Multipliers `c` tried for the lasso penalty `lambda = c / sqrt(n)`.
pub const LASSO_C_GRID: [f64; 6] = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "space", rename_all = "snake_case")]
pub enum HypothesisSpace {
    Constant,
    Linear,
    LinearSubset { features: Vec<usize> },
    TreeEnsemble { learner: LearnerSpec },
    LassoLinear,
}

impl HypothesisSpace {
    pub fn name(&self) -> &'static str {
        match self {
            HypothesisSpace::Constant => "constant",
            HypothesisSpace::Linear => "linear",
            HypothesisSpace::LinearSubset { .. } => "linear_subset",
            HypothesisSpace::TreeEnsemble { .. } => "tree_ensemble",
            HypothesisSpace::LassoLinear => "lasso_linear",
        }
    }

    /// Feature columns used by a linear space with `d` available features.
    pub fn linear_features(&self, d: usize) -> Option<Vec<usize>> {
        match self {
            HypothesisSpace::Linear | HypothesisSpace::LassoLinear => Some((0..d).collect()),
            HypothesisSpace::LinearSubset { features } => Some(features.clone()),
            _ => None,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            HypothesisSpace::LinearSubset { features } => {
                if let Some(&bad) = features.iter().find(|&&f| f >= d) {
                    return Err(Error::Argument(format!(
                        "linear_subset feature {bad} out of range for {d} features"
                    )));
                }
                let mut sorted = features.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != features.len() {
                    return Err(Error::Argument(
                        "linear_subset features must be distinct".into(),
                    ));
                }
                Ok(())
            }
            HypothesisSpace::TreeEnsemble { learner } => {
                if learner.is_classifier() {
                    return Err(Error::Argument(format!(
                        "tree_ensemble final stage needs a regressor, got {}",
                        learner.name()
                    )));
                }
                learner.validate()
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CateParams {
    Constant {
        value: f64,
    },
    Linear {
        intercept: f64,
        /// Coefficients aligned with `features`.
        coef: Vec<f64>,
        features: Vec<usize>,
    },
    Model {
        model: FittedModel,
        /// Lasso multiplier `c` chosen by cross-validation.
        #[serde(skip_serializing_if = "Option::is_none", default)]
        lasso_c: Option<f64>,
    },
}

/// A fitted effect function `theta(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateModel {
    pub space: HypothesisSpace,
    pub params: CateParams,
    pub feature_dim: usize,
}

impl CateModel {
    pub fn constant(value: f64, feature_dim: usize) -> Self {
        Self {
            space: HypothesisSpace::Constant,
            params: CateParams::Constant { value },
            feature_dim,
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match &self.params {
            CateParams::Constant { value } => *value,
            CateParams::Linear {
                intercept,
                coef,
                features,
            } => intercept + coef.iter().zip(features).map(|(b, &f)| b * x[f]).sum::<f64>(),
            CateParams::Model { model, .. } => model.predict_row(x),
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.feature_dim {
            return Err(Error::Argument(format!(
                "effect model expects {} features, got {}",
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

    /// `(intercept, coefficients)` for constant and linear spaces.
    pub fn coefficients(&self) -> Option<(f64, Vec<f64>)> {
        match &self.params {
            CateParams::Constant { value } => Some((*value, Vec::new())),
            CateParams::Linear { intercept, coef, .. } => Some((*intercept, coef.clone())),
            CateParams::Model { model, .. } => {
                model.coefficients().map(|(b, c)| (b, c.to_vec()))
            }
        }
    }

    pub fn feature_importance(&self) -> Option<&[f64]> {
        match &self.params {
            CateParams::Model { model, .. } => model.feature_importance(),
            _ => None,
        }
    }
}

fn select_columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), cols.len(), |r, c| x[(r, cols[c])])
}

/// Minimize `sum w (label - theta(x))^2` over `space`. Rows with zero weight
/// have no influence; all-zero weights mean the effect is not identified.
pub fn fit_final_stage(
    x: &DMatrix<f64>,
    labels: &[f64],
    weights: Option<&[f64]>,
    space: &HypothesisSpace,
) -> Result<CateModel> {
    let (n, d) = x.shape();
    space.validate(d)?;
    if labels.len() != n {
        return Err(Error::Argument(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::Argument(format!("{} weights for {n} rows", w.len())));
        }
        if !w.iter().any(|&v| v > 0.0) {
            return Err(Error::NoIdentification(
                "instrument has no effect anywhere in-sample".into(),
            ));
        }
    }
    if let Some(i) = labels.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("final-stage label not finite at row {i}")));
    }
    let params = match space {
        HypothesisSpace::Constant => {
            let (num, den) = match weights {
                Some(w) => labels
                    .iter()
                    .zip(w)
                    .fold((0.0, 0.0), |(a, b), (y, w)| (a + w * y, b + w)),
                None => (labels.iter().sum(), n as f64),
            };
            CateParams::Constant { value: num / den }
        }
        HypothesisSpace::Linear | HypothesisSpace::LinearSubset { .. } => {
            let features = space.linear_features(d).unwrap();
            let xs = select_columns(x, &features);
            let m = fit_regressor(&LearnerSpec::Ols, &xs, labels, weights)?;
            let (intercept, coef) = m.coefficients().unwrap();
            CateParams::Linear {
                intercept,
                coef: coef.to_vec(),
                features,
            }
        }
        HypothesisSpace::TreeEnsemble { learner } => CateParams::Model {
            model: fit_regressor(learner, x, labels, weights)?,
            lasso_c: None,
        },
        HypothesisSpace::LassoLinear => {
            let n_eff = weights.map_or(n, |w| w.iter().filter(|&&v| v > 0.0).count());
            let root = (n_eff as f64).sqrt();
            let grid: Vec<LearnerSpec> =
                LASSO_C_GRID.iter().map(|c| LearnerSpec::lasso(c / root)).collect();
            let best = if n_eff >= 2 * CV_FOLDS {
                cross_validate_weighted(&grid, x, labels, weights, CV_FOLDS, 0)?
            } else {
                grid[0].clone()
            };
            let c = match &best {
                LearnerSpec::Lasso { lambda, .. } => lambda * root,
                _ => unreachable!(),
            };
            CateParams::Model {
                model: fit_regressor(&best, x, labels, weights)?,
                lasso_c: Some(c),
            }
        }
    };
    Ok(CateModel {
        space: space.clone(),
        params,
        feature_dim: d,
    })
}
