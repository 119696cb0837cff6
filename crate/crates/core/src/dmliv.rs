//! Preliminary effect estimation by minimizing
//! `L1(theta) = E[(Y_res - theta(X) (h(Z,X) - p(X)))^2]`, which reduces to a
//! regression of `Y_res / gamma` on `X` with weights `gamma^2`,
//! `gamma = h - p`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::cate::{fit_final_stage, CateModel, HypothesisSpace};
use crate::crossfit::{NuisanceSet, Residuals};
use crate::dataset::IvDataset;
use crate::error::{Error, Result};

/// Rows with `|h - p|` below this get zero weight.
pub const GAMMA_EPS: f64 = 1e-9;

/// Overlap below this smallest eigenvalue is flagged as weak.
pub const WEAK_OVERLAP: f64 = 1e-6;

/// Labels `Y_res / gamma` and weights `gamma^2`.
pub fn dmliv_reduction(res: &Residuals) -> (Vec<f64>, Vec<f64>) {
    res.y_res
        .iter()
        .zip(&res.z_pi_res)
        .map(|(&y, &g)| {
            if g.abs() < GAMMA_EPS {
                (0.0, 0.0)
            } else {
                (y / g, g * g)
            }
        })
        .unzip()
}

/// Empirical `L1` of `theta` without the constant factor.
pub fn l1_loss(res: &Residuals, theta: &[f64]) -> f64 {
    let n = res.n() as f64;
    (0..res.n())
        .map(|i| (res.y_res[i] - theta[i] * res.z_pi_res[i]).powi(2))
        .sum::<f64>()
        / n
}

pub fn fit_dmliv_on(x: &DMatrix<f64>, res: &Residuals, space: &HypothesisSpace) -> Result<CateModel> {
    let (labels, weights) = dmliv_reduction(res);
    fit_final_stage(x, &labels, Some(&weights), space)
}

/// Fit DMLIV over `space` from out-of-fold nuisances.
pub fn fit_dmliv(
    data: &IvDataset,
    nuisances: &NuisanceSet,
    space: &HypothesisSpace,
) -> Result<CateModel> {
    let res = crate::crossfit::compute_residuals(data, nuisances)?;
    fit_dmliv_on(&data.x, &res, space)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapDiagnostics {
    pub v_min: f64,
    pub v_p05: f64,
    pub v_mean: f64,
    /// Smallest eigenvalue of `mean(V(X) phi phi^T)` with `phi = [1, X]`.
    pub lambda_min: f64,
    pub weak: bool,
}

pub fn overlap_diagnostic(nuisances: &NuisanceSet, x: &DMatrix<f64>) -> Result<OverlapDiagnostics> {
    let v = &nuisances.v;
    let n = v.len();
    if n == 0 || x.nrows() != n {
        return Err(Error::Argument(format!(
            "overlap needs matching rows: {n} values of V, {} feature rows",
            x.nrows()
        )));
    }
    let mut sorted = v.clone();
    sorted.sort_by(f64::total_cmp);
    let p05 = sorted[((n - 1) as f64 * 0.05).round() as usize];
    let k = x.ncols() + 1;
    let mut m = DMatrix::<f64>::zeros(k, k);
    let mut phi = vec![0.0; k];
    for i in 0..n {
        phi[0] = 1.0;
        for c in 0..x.ncols() {
            phi[c + 1] = x[(i, c)];
        }
        for a in 0..k {
            let va = v[i] * phi[a];
            for b in a..k {
                m[(a, b)] += va * phi[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            m[(a, b)] = m[(b, a)];
        }
    }
    m /= n as f64;
    let lambda_min = SymmetricEigen::new(m).eigenvalues.min();
    Ok(OverlapDiagnostics {
        v_min: sorted[0],
        v_p05: p05,
        v_mean: v.iter().sum::<f64>() / n as f64,
        lambda_min,
        weak: lambda_min < WEAK_OVERLAP,
    })
}
