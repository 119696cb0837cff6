//! L2-penalized logistic regression by damped Newton iterations.

use nalgebra::{DMatrix, DVector};

use super::linear::solve_spd;
use crate::error::{Error, Result};

const MAX_ITER: usize = 100;
const STEP_TOL: f64 = 1e-10;

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn objective(x: &DMatrix<f64>, y: &[f64], w: &[f64], lambda: f64, theta: &DVector<f64>) -> f64 {
    let d = x.ncols();
    let mut loss = 0.0;
    for i in 0..x.nrows() {
        let eta = theta[0] + (0..d).map(|c| x[(i, c)] * theta[c + 1]).sum::<f64>();
        // log(1 + e^eta) - y * eta, stable for both signs
        let softplus = if eta > 0.0 {
            eta + (-eta).exp().ln_1p()
        } else {
            eta.exp().ln_1p()
        };
        loss += w[i] * (softplus - y[i] * eta);
    }
    loss + 0.5 * lambda * theta.rows(1, d).norm_squared()
}

/// Minimize `sum w log-loss + lambda / 2 |beta|^2`, intercept unpenalized.
pub(crate) fn fit_logistic(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    let (n, d) = x.shape();
    let p = d + 1;
    let mut theta = DVector::zeros(p);
    let ybar = super::linear::weighted_mean(y, w).clamp(1e-6, 1.0 - 1e-6);
    theta[0] = (ybar / (1.0 - ybar)).ln();
    let mut obj = objective(x, y, w, lambda, &theta);
    for _ in 0..MAX_ITER {
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        let mut row = vec![0.0; p];
        for i in 0..n {
            row[0] = 1.0;
            for c in 0..d {
                row[c + 1] = x[(i, c)];
            }
            let eta: f64 = row.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
            let mu = sigmoid(eta);
            let g = w[i] * (mu - y[i]);
            let h = w[i] * mu * (1.0 - mu);
            for a in 0..p {
                grad[a] += g * row[a];
                let ha = h * row[a];
                for b in a..p {
                    hess[(a, b)] += ha * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        for j in 1..p {
            grad[j] += lambda * theta[j];
            hess[(j, j)] += lambda;
        }
        // tiny ridge on the intercept keeps the all-one-class edge case solvable
        hess[(0, 0)] += 1e-12;
        let step = solve_spd(&hess, &grad)
            .ok_or_else(|| Error::Numerical("logistic Hessian is singular".into()))?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &theta - &step * scale;
            let cand_obj = objective(x, y, w, lambda, &cand);
            if cand_obj <= obj + 1e-12 * obj.abs().max(1.0) {
                theta = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted || step.amax() * scale < STEP_TOL {
            break;
        }
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("logistic coefficients diverged".into()));
    }
    Ok((theta[0], theta.rows(1, d).iter().copied().collect()))
}
