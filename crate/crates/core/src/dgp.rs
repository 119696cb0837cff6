//! Semi-synthetic data with known effect functions.
//!
//! `theta(X)` is always evaluated on the raw covariates; the estimators see
//! the processed features (quantile-normalized for the TripAdvisor-style
//! families, standardized continuous columns for NLSYM).

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::crossfit::NuisanceSet;
use crate::dataset::{quantile_normalize, IvDataset};
use crate::error::{Error, Result};

/// Quantile levels used when normalizing generated covariates.
pub const DGP_QUANTILES: usize = 1000;

/// Smallest sample a DGP will generate.
pub const MIN_DGP_ROWS: usize = 100;

/// Rows in the NLSYM extract.
pub const NLSYM_ROWS: usize = 3010;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpFamily {
    Tripadvisor,
    Coverage,
    Nlsym,
}

impl DgpFamily {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "tripadvisor" => Ok(DgpFamily::Tripadvisor),
            "coverage" => Ok(DgpFamily::Coverage),
            "nlsym" => Ok(DgpFamily::Nlsym),
            other => Err(Error::Argument(format!(
                "unknown DGP family `{other}` (expected tripadvisor, coverage or nlsym)"
            ))),
        }
    }

    /// Multiplier on the confounder in the outcome equation.
    pub fn default_endogeneity(self) -> f64 {
        match self {
            DgpFamily::Tripadvisor => 0.1,
            DgpFamily::Coverage => 0.2,
            DgpFamily::Nlsym => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub family: DgpFamily,
    pub n: usize,
    pub endogeneity_coef: f64,
    pub seed: u64,
    /// When false the additive outcome noise is set to its mean.
    pub noise: bool,
    /// Seed for the NLSYM surrogate covariates (held fixed across replicates).
    pub covariate_seed: u64,
}

impl DgpSpec {
    pub fn new(family: DgpFamily, n: usize, seed: u64) -> Self {
        Self {
            family,
            n,
            endogeneity_coef: family.default_endogeneity(),
            seed,
            noise: true,
            covariate_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < MIN_DGP_ROWS {
            return Err(Error::Argument(format!(
                "DGP needs n >= {MIN_DGP_ROWS}, got {}",
                self.n
            )));
        }
        if !self.endogeneity_coef.is_finite() {
            return Err(Error::Argument("endogeneity coefficient must be finite".into()));
        }
        Ok(())
    }
}

/// Known effect function and average effect for a generated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub family: DgpFamily,
    /// Population average effect (exact for the TripAdvisor-style families,
    /// the in-sample mean of `theta` for NLSYM).
    pub true_ate: f64,
    /// Absolute precision of `true_ate`.
    pub ate_precision: f64,
    /// `theta(X_i)` for each generated row.
    #[serde(skip)]
    pub theta: Vec<f64>,
    /// Exact coefficients of `theta` in a linear basis of processed features,
    /// when one exists: `(names, intercept-first coefficients)`.
    pub projection: Option<(Vec<String>, Vec<f64>)>,
}

/// Exact conditional moments of the DGP given `X`, per row.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMoments {
    /// `Pr[Z = 1 | X]`
    pub pi: Vec<f64>,
    /// `E[T | Z = 0, X]`, `E[T | Z = 1, X]`
    pub h0: Vec<f64>,
    pub h1: Vec<f64>,
    /// `E[Y | Z = 0, X]`, `E[Y | Z = 1, X]`
    pub g0: Vec<f64>,
    pub g1: Vec<f64>,
}

impl OracleMoments {
    pub fn n(&self) -> usize {
        self.pi.len()
    }

    /// True nuisances evaluated at the observed instrument values.
    pub fn nuisances(&self, z: &[f64]) -> NuisanceSet {
        let n = self.n();
        let mut q = Vec::with_capacity(n);
        let mut p = Vec::with_capacity(n);
        let mut h = Vec::with_capacity(n);
        let mut tz = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for i in 0..n {
            let pi = self.pi[i];
            q.push(pi * self.g1[i] + (1.0 - pi) * self.g0[i]);
            p.push(pi * self.h1[i] + (1.0 - pi) * self.h0[i]);
            h.push(if z[i] == 1.0 { self.h1[i] } else { self.h0[i] });
            tz.push(pi * self.h1[i]);
            v.push(pi * (1.0 - pi) * (self.h1[i] - self.h0[i]).powi(2));
        }
        let mut set = NuisanceSet::from_parts(q, p, self.pi.clone(), h, tz, v)
            .expect("oracle nuisances have equal lengths");
        set.h_arms = Some((self.h0.clone(), self.h1.clone()));
        set
    }

    /// `Cov(T, Z | X)`
    pub fn beta(&self) -> Vec<f64> {
        (0..self.n())
            .map(|i| self.pi[i] * (1.0 - self.pi[i]) * (self.h1[i] - self.h0[i]))
            .collect()
    }
}

/// A generated dataset with everything known about how it was made.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub spec: DgpSpec,
    pub data: IvDataset,
    pub raw_x: DMatrix<f64>,
    pub truth: GroundTruth,
    pub oracle: OracleMoments,
}

pub fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

/// `E[logistic(0.1 (x + nu))]` for `nu ~ U[0, 10]`.
pub fn mean_compliance_logit(x: f64) -> f64 {
    softplus(0.1 * x + 1.0) - softplus(0.1 * x)
}

/// Covariate names of the TripAdvisor-style families.
pub fn tripadvisor_columns() -> Vec<String> {
    [
        "days_visited_free_pre",
        "days_visited_hs_pre",
        "days_visited_rs_pre",
        "days_visited_exp_pre",
        "days_visited_vrs_pre",
        "days_visited_fs_pre",
        "locale_US",
        "os_type=Linux",
        "os_type=OSX",
        "revenue_pre",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Family constants of the TripAdvisor-style outcome and compliance model.
struct TaParams {
    complier_scale: f64,
    noncomplier_p: f64,
    x0_coef: f64,
    noise_scale: f64,
    theta: fn(&[f64]) -> f64,
    true_ate: f64,
}

fn theta_tripadvisor(x: &[f64]) -> f64 {
    0.2 + 0.1 * x[0] - 2.7 * x[6]
}

fn theta_coverage(x: &[f64]) -> f64 {
    0.8 + 0.5 * x[0] - 3.0 * x[7]
}

/// Effect function of a family on one raw covariate row.
pub fn theta_raw(family: DgpFamily, x: &[f64]) -> f64 {
    match family {
        DgpFamily::Tripadvisor => theta_tripadvisor(x),
        DgpFamily::Coverage => theta_coverage(x),
        DgpFamily::Nlsym => theta_nlsym(x),
    }
}

fn ta_params(family: DgpFamily) -> TaParams {
    match family {
        // E[X0] = 14, Pr[locale] = 1/2
        DgpFamily::Tripadvisor => TaParams {
            complier_scale: 0.017,
            noncomplier_p: 0.006,
            x0_coef: 0.4,
            noise_scale: 2.0,
            theta: theta_tripadvisor,
            true_ate: 0.2 + 0.1 * 14.0 - 2.7 * 0.5,
        },
        // E[X0] = 14, Pr[os = Linux] = 1/3
        DgpFamily::Coverage => TaParams {
            complier_scale: 0.2,
            noncomplier_p: 0.1,
            x0_coef: 0.1,
            noise_scale: 0.1,
            theta: theta_coverage,
            true_ate: 0.8 + 0.5 * 14.0 - 3.0 / 3.0,
        },
        DgpFamily::Nlsym => unreachable!(),
    }
}

/// Raw TripAdvisor-schema covariates.
pub fn tripadvisor_covariates(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let revenue = LogNormal::new(0.0, 3.0).expect("valid lognormal");
    let mut x = DMatrix::zeros(n, 10);
    for i in 0..n {
        for c in 0..6 {
            x[(i, c)] = f64::from(rng.random_range(0..=28u32));
        }
        x[(i, 6)] = f64::from(u8::from(rng.random_bool(0.5)));
        match rng.random_range(0..3u8) {
            0 => x[(i, 7)] = 1.0,
            1 => x[(i, 8)] = 1.0,
            _ => {}
        }
        x[(i, 9)] = revenue.sample(rng);
    }
    x
}

fn gen_ta_family(spec: &DgpSpec) -> Result<Simulation> {
    spec.validate()?;
    let par = ta_params(spec.family);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let raw_x = tripadvisor_covariates(n, &mut rng);
    let (mut t, mut z, mut y, mut theta) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    let mut oracle = OracleMoments {
        pi: vec![0.5; n],
        h0: Vec::with_capacity(n),
        h1: Vec::with_capacity(n),
        g0: Vec::with_capacity(n),
        g1: Vec::with_capacity(n),
    };
    let noise_mean = 0.5 * par.noise_scale;
    let coef = spec.endogeneity_coef;
    let mut row = vec![0.0; 10];
    for i in 0..n {
        for (c, v) in row.iter_mut().enumerate() {
            *v = raw_x[(i, c)];
        }
        let th = (par.theta)(&row);
        let zi = f64::from(u8::from(rng.random_bool(0.5)));
        let nu: f64 = rng.random_range(0.0..10.0);
        let pc = par.complier_scale * logistic(0.1 * (row[0] + nu));
        let c = f64::from(u8::from(rng.random_bool(pc)));
        let c0 = f64::from(u8::from(rng.random_bool(par.noncomplier_p)));
        let u: f64 = rng.random();
        let ti = c * zi + c0 * (1.0 - zi);
        let noise = if spec.noise { par.noise_scale * u } else { noise_mean };
        y.push(th * (ti + coef * nu) + par.x0_coef * row[0] + noise);
        t.push(ti);
        z.push(zi);
        theta.push(th);
        let h1 = par.complier_scale * mean_compliance_logit(row[0]);
        let h0 = par.noncomplier_p;
        let base = th * coef * 5.0 + par.x0_coef * row[0] + noise_mean;
        oracle.h0.push(h0);
        oracle.h1.push(h1);
        oracle.g0.push(th * h0 + base);
        oracle.g1.push(th * h1 + base);
    }
    let x = quantile_normalize(&raw_x, DGP_QUANTILES)?;
    let data = IvDataset::new(x, t, z, y, tripadvisor_columns(), true)?;
    Ok(Simulation {
        spec: spec.clone(),
        data,
        raw_x,
        truth: GroundTruth {
            family: spec.family,
            true_ate: par.true_ate,
            ate_precision: 0.0,
            theta,
            projection: None,
        },
        oracle,
    })
}

/// TripAdvisor-style DGP with `theta = 0.2 + 0.1 X0 - 2.7 X6`.
pub fn gen_tripadvisor(spec: &DgpSpec) -> Result<Simulation> {
    if spec.family != DgpFamily::Tripadvisor {
        return Err(Error::Argument("spec family is not tripadvisor".into()));
    }
    gen_ta_family(spec)
}

/// Coverage-experiment DGP with `theta = 0.8 + 0.5 X0 - 3 X7`.
pub fn gen_coverage(spec: &DgpSpec) -> Result<Simulation> {
    if spec.family != DgpFamily::Coverage {
        return Err(Error::Argument("spec family is not coverage".into()));
    }
    gen_ta_family(spec)
}

/// Covariates and instrument the NLSYM design is built on.
#[derive(Debug, Clone, PartialEq)]
pub struct NlsymCovariates {
    pub x_raw: DMatrix<f64>,
    pub z: Vec<f64>,
    pub names: Vec<String>,
    /// Columns standardized to mean 0 and variance 1 before estimation.
    pub standardize: Vec<usize>,
}

/// Mother's education and single-mother-at-14 columns.
pub const NLSYM_MOTHEDUC: usize = 4;
pub const NLSYM_SINMOM14: usize = 7;

fn theta_nlsym(x: &[f64]) -> f64 {
    0.1 + 0.05 * x[NLSYM_MOTHEDUC] - 0.1 * x[NLSYM_SINMOM14]
}

pub fn nlsym_columns() -> Vec<String> {
    let mut names: Vec<String> = [
        "exper", "black", "south", "smsa", "motheduc", "fatheduc", "momdad14", "sinmom14",
        "step14", "south66", "smsa66",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.extend((662..=669).map(|r| format!("reg{r}")));
    names.extend(["libcrd14", "daded", "momed"].iter().map(|s| s.to_string()));
    names
}

/// Offline stand-in for the NLSYM extract: 3,010 rows, 22 mostly binary
/// covariates with roughly the published marginals, and a college-proximity
/// instrument independent of the covariates.
pub fn nlsym_surrogate_covariates(seed: u64) -> NlsymCovariates {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = NLSYM_ROWS;
    let exper = Normal::<f64>::new(8.9, 4.1).expect("valid normal");
    let mothed = Normal::<f64>::new(10.34, 3.0).expect("valid normal");
    let fathed = Normal::<f64>::new(10.0, 3.3).expect("valid normal");
    let region_p = [0.04, 0.16, 0.20, 0.08, 0.20, 0.09, 0.06, 0.05, 0.12];
    let mut x = DMatrix::zeros(n, 22);
    let mut z = Vec::with_capacity(n);
    let bern = |rng: &mut ChaCha8Rng, p: f64| f64::from(u8::from(rng.random_bool(p)));
    for i in 0..n {
        x[(i, 0)] = exper.sample(&mut rng).round().clamp(0.0, 23.0);
        x[(i, 1)] = bern(&mut rng, 0.23);
        x[(i, 2)] = bern(&mut rng, 0.40);
        x[(i, 3)] = bern(&mut rng, 0.71);
        x[(i, 4)] = mothed.sample(&mut rng).round().clamp(0.0, 18.0);
        x[(i, 5)] = fathed.sample(&mut rng).round().clamp(0.0, 18.0);
        let fam: f64 = rng.random();
        if fam < 0.79 {
            x[(i, 6)] = 1.0;
        } else if fam < 0.87 {
            x[(i, 7)] = 1.0;
        } else if fam < 0.91 {
            x[(i, 8)] = 1.0;
        }
        x[(i, 9)] = bern(&mut rng, 0.41);
        x[(i, 10)] = bern(&mut rng, 0.65);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in region_p.iter().enumerate() {
            acc += p;
            if u < acc {
                if k > 0 {
                    x[(i, 10 + k)] = 1.0;
                }
                break;
            }
        }
        x[(i, 19)] = bern(&mut rng, 0.67);
        x[(i, 20)] = bern(&mut rng, 0.23);
        x[(i, 21)] = bern(&mut rng, 0.12);
        z.push(bern(&mut rng, 0.68));
    }
    NlsymCovariates {
        x_raw: x,
        z,
        names: nlsym_columns(),
        standardize: vec![0, 4, 5],
    }
}

fn mean_sd(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let m = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Treatment and outcome generated on fixed covariates:
/// `T = c0 X4 Z + X4 + nu`, `Y = theta (T + nu) + 0.05 X4 + N(0, 0.1^2)`,
/// `nu ~ U[0,1]`, `c0 ~ U[0.2, 0.3]` drawn once per dataset.
pub fn gen_nlsym_semi(cov: &NlsymCovariates, spec: &DgpSpec) -> Result<Simulation> {
    let (n, d) = cov.x_raw.shape();
    if d <= NLSYM_SINMOM14 {
        return Err(Error::Schema(format!(
            "NLSYM design needs covariates 4 and 7, got {d} columns"
        )));
    }
    if cov.z.len() != n || cov.names.len() != d {
        return Err(Error::Schema("NLSYM covariates, instrument and names disagree".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c0: f64 = rng.random_range(0.2..0.3);
    let noise = Normal::new(0.0, 0.1).expect("valid normal");
    let coef = spec.endogeneity_coef;
    let (mut t, mut y, mut theta) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut oracle = OracleMoments {
        pi: vec![cov.z.iter().sum::<f64>() / n as f64; n],
        h0: Vec::with_capacity(n),
        h1: Vec::with_capacity(n),
        g0: Vec::with_capacity(n),
        g1: Vec::with_capacity(n),
    };
    let mut row = vec![0.0; d];
    for i in 0..n {
        for (c, v) in row.iter_mut().enumerate() {
            *v = cov.x_raw[(i, c)];
        }
        let x4 = row[NLSYM_MOTHEDUC];
        let th = theta_nlsym(&row);
        let nu: f64 = rng.random();
        let eps = if spec.noise { noise.sample(&mut rng) } else { 0.0 };
        let ti = c0 * x4 * cov.z[i] + x4 + nu;
        t.push(ti);
        y.push(th * (ti + coef * nu) + 0.05 * x4 + eps);
        theta.push(th);
        let h0 = x4 + 0.5;
        let h1 = c0 * x4 + x4 + 0.5;
        oracle.h0.push(h0);
        oracle.h1.push(h1);
        oracle.g0.push(th * (h0 + coef * 0.5) + 0.05 * x4);
        oracle.g1.push(th * (h1 + coef * 0.5) + 0.05 * x4);
    }
    let mut x = cov.x_raw.clone();
    let mut scale4 = (0.0, 1.0);
    for &c in &cov.standardize {
        let (m, s) = mean_sd(cov.x_raw.column(c).iter().copied());
        if s > 0.0 {
            for i in 0..n {
                x[(i, c)] = (cov.x_raw[(i, c)] - m) / s;
            }
        }
        if c == NLSYM_MOTHEDUC {
            scale4 = (m, s);
        }
    }
    let projection = (cov.standardize.contains(&NLSYM_MOTHEDUC)
        && !cov.standardize.contains(&NLSYM_SINMOM14))
    .then(|| {
        (
            vec![
                "intercept".to_string(),
                cov.names[NLSYM_MOTHEDUC].clone(),
                cov.names[NLSYM_SINMOM14].clone(),
            ],
            vec![0.1 + 0.05 * scale4.0, 0.05 * scale4.1, -0.1],
        )
    });
    let true_ate = theta.iter().sum::<f64>() / n as f64;
    let data = IvDataset::new(x, t, cov.z.clone(), y, cov.names.clone(), false)?;
    Ok(Simulation {
        spec: spec.clone(),
        data,
        raw_x: cov.x_raw.clone(),
        truth: GroundTruth {
            family: DgpFamily::Nlsym,
            true_ate,
            ate_precision: 0.0,
            theta,
            projection,
        },
        oracle,
    })
}

/// Generate any family; NLSYM uses the surrogate covariates drawn from
/// `spec.covariate_seed` (its `n` is fixed at 3,010).
pub fn generate(spec: &DgpSpec) -> Result<Simulation> {
    match spec.family {
        DgpFamily::Tripadvisor => gen_tripadvisor(spec),
        DgpFamily::Coverage => gen_coverage(spec),
        DgpFamily::Nlsym => {
            spec.validate()?;
            gen_nlsym_semi(&nlsym_surrogate_covariates(spec.covariate_seed), spec)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_compliance_matches_quadrature() {
        for x in [0.0, 7.0, 28.0] {
            let m = 20_000;
            let quad: f64 = (0..m)
                .map(|k| logistic(0.1 * (x + 10.0 * (k as f64 + 0.5) / m as f64)))
                .sum::<f64>()
                / m as f64;
            assert!((mean_compliance_logit(x) - quad).abs() < 1e-9);
        }
    }

    #[test]
    fn unknown_family_rejected() {
        assert!(matches!(DgpFamily::parse("card"), Err(Error::Argument(_))));
    }
}
