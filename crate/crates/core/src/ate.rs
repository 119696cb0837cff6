//! Average treatment effect estimators with normal confidence intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::crossfit::Residuals;
use crate::error::{Error, Result};

/// Relevance guard on `|mean(T_res Z_res)|`.
pub const WEAK_INSTRUMENT_THRESHOLD: f64 = 1e-10;

/// Two-sided standard normal critical value for confidence `level`.
pub fn normal_critical(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Argument(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(std.inverse_cdf(0.5 + level / 2.0))
}

/// A scalar estimate with a symmetric normal interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub point: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub n_used: usize,
}

impl EstimateWithCI {
    pub fn normal(point: f64, stderr: f64, level: f64, n_used: usize) -> Result<Self> {
        let z = normal_critical(level)?;
        Ok(Self {
            point,
            stderr,
            ci_low: point - z * stderr,
            ci_high: point + z * stderr,
            level,
            n_used,
        })
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }

    pub fn width(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation with the `n - 1` denominator.
pub(crate) fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Constant-effect orthogonal moment estimator
/// `theta = sum(Y_res Z_res) / sum(T_res Z_res)`.
pub fn estimate_dmlateiv(res: &Residuals, level: f64) -> Result<EstimateWithCI> {
    let n = res.n();
    if n == 0 {
        return Err(Error::Argument("no rows to estimate from".into()));
    }
    let num: f64 = res.y_res.iter().zip(&res.z_res).map(|(y, z)| y * z).sum();
    let den: f64 = res.t_res.iter().zip(&res.z_res).map(|(t, z)| t * z).sum();
    let strength = (den / n as f64).abs();
    if !(strength > WEAK_INSTRUMENT_THRESHOLD) {
        return Err(Error::WeakInstrument {
            strength,
            threshold: WEAK_INSTRUMENT_THRESHOLD,
        });
    }
    let theta = num / den;
    let mean_tz = den / n as f64;
    let psi: Vec<f64> = (0..n)
        .map(|i| (res.y_res[i] - theta * res.t_res[i]) * res.z_res[i] / mean_tz)
        .collect();
    EstimateWithCI::normal(theta, sample_sd(&psi) / (n as f64).sqrt(), level, n)
}

/// Mean of a doubly robust pseudo-outcome with its plug-in standard error.
pub fn estimate_dr_ate(y_dr: &[f64], level: f64) -> Result<EstimateWithCI> {
    let n = y_dr.len();
    if n == 0 {
        return Err(Error::Argument("no rows to estimate from".into()));
    }
    if let Some(i) = y_dr.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "pseudo-outcome is not finite at row {i}"
        )));
    }
    EstimateWithCI::normal(mean(y_dr), sample_sd(y_dr) / (n as f64).sqrt(), level, n)
}
