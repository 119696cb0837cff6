//! Weighted linear regression: ordinary least squares, ridge, and lasso by
//! cyclic coordinate descent. The intercept is never penalized.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lasso stops when no coefficient moves by more than this in a sweep.
pub const LASSO_TOL: f64 = 1e-7;
pub const LASSO_MAX_SWEEPS: usize = 10_000;

/// Pivot ratio below which an equilibrated Gram matrix is treated as singular.
const SINGULAR_PIVOT: f64 = 1e-12;

pub(crate) fn weighted_mean(v: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw
}

/// Column means under weights `w`.
pub(crate) fn column_means(x: &DMatrix<f64>, w: &[f64]) -> Vec<f64> {
    (0..x.ncols())
        .map(|c| weighted_mean(x.column(c).as_slice(), w))
        .collect()
}

/// Solve `A x = b` for symmetric positive definite `A` after diagonal
/// equilibration. Returns `None` when `A` is numerically singular.
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let d = a.nrows();
    if d == 0 {
        return Some(DVector::zeros(0));
    }
    let scale: Vec<f64> = (0..d)
        .map(|i| {
            let v = a[(i, i)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    if scale.iter().any(|&s| s == 0.0 || !s.is_finite()) {
        return None;
    }
    let scaled = DMatrix::from_fn(d, d, |i, j| a[(i, j)] * scale[i] * scale[j]);
    let chol = scaled.cholesky()?;
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, &v| m.min(v * v));
    if min_pivot < SINGULAR_PIVOT {
        return None;
    }
    let rhs = DVector::from_fn(d, |i, _| b[i] * scale[i]);
    let sol = chol.solve(&rhs);
    Some(DVector::from_fn(d, |i, _| sol[i] * scale[i]))
}

/// Weighted ridge regression `min sum w (y - b - x beta)^2 + lambda |beta|^2`.
/// `lambda = 0` is ordinary (weighted) least squares.
pub(crate) fn fit_ridge(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    let (n, d) = x.shape();
    let xm = column_means(x, w);
    let ym = weighted_mean(y, w);
    if d == 0 {
        return Ok((ym, Vec::new()));
    }
    let xw = DMatrix::from_fn(n, d, |r, c| (x[(r, c)] - xm[c]) * w[r].sqrt());
    let yw = DVector::from_fn(n, |r, _| (y[r] - ym) * w[r].sqrt());
    let mut gram = xw.tr_mul(&xw);
    for i in 0..d {
        gram[(i, i)] += lambda;
    }
    let rhs = xw.tr_mul(&yw);
    let beta = solve_spd(&gram, &rhs).ok_or_else(|| {
        Error::Numerical(if lambda == 0.0 {
            "singular design in least squares; use ridge with a positive penalty".into()
        } else {
            "ridge system is singular".into()
        })
    })?;
    let coef: Vec<f64> = beta.iter().copied().collect();
    let intercept = ym - coef.iter().zip(&xm).map(|(b, m)| b * m).sum::<f64>();
    Ok((intercept, coef))
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Weighted lasso `min (1 / 2 sum w) sum w (y - b - x beta)^2 + lambda |beta|_1`
/// by cyclic coordinate descent on centered data.
pub(crate) fn fit_lasso(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    let (n, d) = x.shape();
    let sw: f64 = w.iter().sum();
    let xm = column_means(x, w);
    let ym = weighted_mean(y, w);
    let xc = DMatrix::from_fn(n, d, |r, c| x[(r, c)] - xm[c]);
    let norms: Vec<f64> = (0..d)
        .map(|c| {
            xc.column(c)
                .iter()
                .zip(w)
                .map(|(v, wi)| wi * v * v)
                .sum::<f64>()
                / sw
        })
        .collect();
    let mut resid: Vec<f64> = y.iter().map(|v| v - ym).collect();
    let mut beta = vec![0.0; d];
    let mut converged = false;
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        for j in 0..d {
            if norms[j] <= 0.0 {
                continue;
            }
            let col = xc.column(j);
            let rho = col
                .iter()
                .zip(&resid)
                .zip(w)
                .map(|((xv, r), wi)| wi * xv * (r + xv * beta[j]))
                .sum::<f64>()
                / sw;
            let new = soft_threshold(rho, lambda) / norms[j];
            let delta = new - beta[j];
            if delta != 0.0 {
                for (r, xv) in resid.iter_mut().zip(col.iter()) {
                    *r -= delta * xv;
                }
                beta[j] = new;
            }
            max_change = max_change.max(delta.abs());
        }
        if max_change < LASSO_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "lasso did not converge in {LASSO_MAX_SWEEPS} sweeps"
        )));
    }
    let intercept = ym - beta.iter().zip(&xm).map(|(b, m)| b * m).sum::<f64>();
    Ok((intercept, beta))
}
