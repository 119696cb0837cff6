//! Least squares with heteroskedasticity-consistent (HC1) standard errors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ate::normal_critical;
use crate::error::{Error, Result};
use crate::learners::solve_spd;

/// Relative residual norm below which a column counts as a linear
/// combination of earlier columns.
const COLLINEAR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProjectionResult {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub robust_stderr: Vec<f64>,
    pub ci: Vec<(f64, f64)>,
    pub level: f64,
    pub n_used: usize,
}

impl LinearProjectionResult {
    pub fn covers(&self, j: usize, value: f64) -> bool {
        self.ci[j].0 <= value && value <= self.ci[j].1
    }
}

/// Columns of `design` that are (numerically) linear combinations of the
/// columns before them, by modified Gram-Schmidt.
pub fn dependent_columns(design: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut bad = Vec::new();
    for j in 0..design.ncols() {
        let col = design.column(j).into_owned();
        let norm = col.norm();
        let mut v = col;
        for b in &basis {
            let proj = b.dot(&v);
            v.axpy(-proj, b, 1.0);
        }
        let rest = v.norm();
        if norm == 0.0 || rest <= COLLINEAR_TOL * norm {
            bad.push(j);
        } else {
            basis.push(v / rest);
        }
    }
    bad
}

/// Ordinary least squares of `y` on `f` (plus a leading intercept when
/// `intercept` is set) with HC1 standard errors.
pub fn ols_robust(
    y: &[f64],
    f: &DMatrix<f64>,
    intercept: bool,
    level: f64,
) -> Result<LinearProjectionResult> {
    wls_robust(y, f, None, intercept, level)
}

/// Weighted least squares with the weighted HC1 sandwich. Zero-weight rows
/// are dropped.
pub fn wls_robust(
    y: &[f64],
    f: &DMatrix<f64>,
    w: Option<&[f64]>,
    intercept: bool,
    level: f64,
) -> Result<LinearProjectionResult> {
    let z = normal_critical(level)?;
    if f.nrows() != y.len() || w.is_some_and(|w| w.len() != y.len()) {
        return Err(Error::Argument("design, outcome and weights differ in length".into()));
    }
    if y.iter().chain(f.iter()).chain(w.into_iter().flatten()).any(|v| !v.is_finite())
        || w.is_some_and(|w| w.iter().any(|&v| v < 0.0))
    {
        return Err(Error::Argument("non-finite or negative input".into()));
    }
    let rows: Vec<usize> = (0..y.len())
        .filter(|&i| w.is_none_or(|w| w[i] > 0.0))
        .collect();
    let n = rows.len();
    let offset = usize::from(intercept);
    let k = f.ncols() + offset;
    if k == 0 {
        return Err(Error::Argument("empty design".into()));
    }
    if k >= n {
        return Err(Error::Argument(format!("need more rows ({n}) than columns ({k})")));
    }
    let design = DMatrix::from_fn(n, k, |r, c| {
        if intercept && c == 0 {
            1.0
        } else {
            f[(rows[r], c - offset)]
        }
    });
    let bad = dependent_columns(&design);
    if !bad.is_empty() {
        return Err(Error::Collinearity {
            columns: bad.into_iter().map(|c| c - offset).collect(),
        });
    }
    let wv: Vec<f64> = rows.iter().map(|&i| w.map_or(1.0, |w| w[i])).collect();
    let yv: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    let mut xtwx = DMatrix::<f64>::zeros(k, k);
    let mut xtwy = DVector::<f64>::zeros(k);
    for r in 0..n {
        let row = design.row(r);
        for a in 0..k {
            let wa = wv[r] * row[a];
            xtwy[a] += wa * yv[r];
            for b in a..k {
                xtwx[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtwx[(a, b)] = xtwx[(b, a)];
        }
    }
    let coef = solve_spd(&xtwx, &xtwy).ok_or_else(|| Error::Collinearity {
        columns: (0..f.ncols()).collect(),
    })?;
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for r in 0..n {
        let row = design.row(r);
        let e = yv[r] - (0..k).map(|c| row[c] * coef[c]).sum::<f64>();
        let s = (wv[r] * e).powi(2);
        for a in 0..k {
            for b in a..k {
                meat[(a, b)] += s * row[a] * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            meat[(a, b)] = meat[(b, a)];
        }
    }
    let bread = xtwx
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Numerical("normal equations not positive definite".into()))?;
    let cov = &bread * meat * &bread * (n as f64 / (n - k) as f64);
    let se: Vec<f64> = (0..k).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let coefficients: Vec<f64> = coef.iter().copied().collect();
    let ci = coefficients
        .iter()
        .zip(&se)
        .map(|(b, s)| (b - z * s, b + z * s))
        .collect();
    let names = (0..k)
        .map(|j| {
            if intercept && j == 0 {
                "intercept".to_string()
            } else {
                format!("x{}", j - offset)
            }
        })
        .collect();
    Ok(LinearProjectionResult {
        names,
        coefficients,
        robust_stderr: se,
        ci,
        level,
        n_used: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_has_zero_stderr() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 + 2.0 * v).collect();
        let f = DMatrix::from_column_slice(10, 1, &x);
        let r = ols_robust(&y, &f, true, 0.95).unwrap();
        assert!((r.coefficients[0] - 3.0).abs() < 1e-10);
        assert!((r.coefficients[1] - 2.0).abs() < 1e-10);
        assert!(r.robust_stderr.iter().all(|s| *s < 1e-6));
    }

    #[test]
    fn duplicated_column_is_collinear() {
        let x: Vec<f64> = (0..10).map(|v| f64::from(v).sin()).collect();
        let mut cols = x.clone();
        cols.extend(&x);
        let f = DMatrix::from_column_slice(10, 2, &cols);
        match ols_robust(&x, &f, true, 0.95) {
            Err(Error::Collinearity { columns }) => assert_eq!(columns, vec![1]),
            other => panic!("expected collinearity, got {other:?}"),
        }
    }
}
