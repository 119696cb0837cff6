//! Out-of-fold nuisance estimation and the residuals built from it.
//!
//! Nuisances: `q(X) = E[Y|X]`, `p(X) = E[T|X]`, `r(X) = E[Z|X]`,
//! `h(Z,X) = E[T|Z,X]`, the moment `E[T Z|X]`, and the derived
//! `beta = E[TZ|X] - p r`, `V = E[(h - p)^2 | X]`.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{select_rows, IvDataset, SplitPlan};
use crate::error::{Error, Result};
use crate::learners::{fit_learner, FittedModel, LearnerSpec};
use crate::par;

/// Lower bound applied to the estimated instrument strength `V(X)`.
pub const V_FLOOR: f64 = 1e-12;

/// Learner used for each nuisance regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSpecs {
    pub q: LearnerSpec,
    pub p: LearnerSpec,
    pub r: LearnerSpec,
    pub h: LearnerSpec,
    pub tz_moment: LearnerSpec,
}

impl NuisanceSpecs {
    /// Unpenalized least squares for every nuisance.
    pub fn linear() -> Self {
        Self::uniform(LearnerSpec::Ols)
    }

    pub fn uniform(spec: LearnerSpec) -> Self {
        Self {
            q: spec.clone(),
            p: spec.clone(),
            r: spec.clone(),
            h: spec.clone(),
            tz_moment: spec,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, spec) in self.named() {
            spec.validate().map_err(|e| e.in_nuisance(name))?;
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, &LearnerSpec); 5] {
        [
            ("q", &self.q),
            ("p", &self.p),
            ("r", &self.r),
            ("h", &self.h),
            ("tz_moment", &self.tz_moment),
        ]
    }
}

/// Fitted `h(Z, X)`. A binary instrument gets one model per arm; any other
/// instrument gets one model on the stacked features `[Z, X]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum InstrumentModel {
    PerArm { zero: FittedModel, one: FittedModel },
    Joint { model: FittedModel },
}

fn with_instrument(x: &DMatrix<f64>, z: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols() + 1, |r, c| {
        if c == 0 {
            z[r]
        } else {
            x[(r, c - 1)]
        }
    })
}

impl InstrumentModel {
    pub fn fit(
        spec: &LearnerSpec,
        x: &DMatrix<f64>,
        t: &[f64],
        z: &[f64],
        binary_z: bool,
    ) -> Result<Self> {
        if binary_z {
            let arm = |value: f64| -> Result<FittedModel> {
                let rows: Vec<usize> = (0..z.len()).filter(|&i| z[i] == value).collect();
                if rows.is_empty() {
                    return Err(Error::NoIdentification(format!(
                        "no training rows with Z = {value}"
                    )));
                }
                let labels: Vec<f64> = rows.iter().map(|&i| t[i]).collect();
                fit_learner(spec, &select_rows(x, &rows), &labels, None)
            };
            Ok(InstrumentModel::PerArm {
                zero: arm(0.0)?,
                one: arm(1.0)?,
            })
        } else {
            Ok(InstrumentModel::Joint {
                model: fit_learner(spec, &with_instrument(x, z), t, None)?,
            })
        }
    }

    /// `h(z_i, x_i)` for every row.
    pub fn predict(&self, x: &DMatrix<f64>, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            InstrumentModel::PerArm { .. } => {
                let (h0, h1) = self.predict_arms(x)?;
                z.iter()
                    .enumerate()
                    .map(|(i, &zi)| match zi {
                        v if v == 1.0 => Ok(h1[i]),
                        v if v == 0.0 => Ok(h0[i]),
                        v => Err(Error::Argument(format!(
                            "per-arm instrument model got Z = {v} at row {i}"
                        ))),
                    })
                    .collect()
            }
            InstrumentModel::Joint { model } => model.predict(&with_instrument(x, z)),
        }
    }

    /// `(h(0, x_i), h(1, x_i))` for every row.
    pub fn predict_arms(&self, x: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            InstrumentModel::PerArm { zero, one } => Ok((zero.predict(x)?, one.predict(x)?)),
            InstrumentModel::Joint { model } => {
                let n = x.nrows();
                Ok((
                    model.predict(&with_instrument(x, &vec![0.0; n]))?,
                    model.predict(&with_instrument(x, &vec![1.0; n]))?,
                ))
            }
        }
    }
}

/// Compliance score and the implied treatment propensity for a binary
/// instrument with `Pr[Z = 1 | X] = 1/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Compliance {
    /// `(2Z - 1) (h(1,X) - h(0,X)) / 2`
    pub delta: Vec<f64>,
    /// `(h(1,X) + h(0,X)) / 2`
    pub p: Vec<f64>,
}

pub fn compliance_from_arms(h0: &[f64], h1: &[f64], z: &[f64]) -> Compliance {
    let delta = z
        .iter()
        .zip(h0.iter().zip(h1))
        .map(|(&zi, (a, b))| (2.0 * zi - 1.0) * (b - a) / 2.0)
        .collect();
    let p = h0.iter().zip(h1).map(|(a, b)| (a + b) / 2.0).collect();
    Compliance { delta, p }
}

pub fn compliance_delta(h_model: &InstrumentModel, data: &IvDataset) -> Result<Compliance> {
    if !data.instrument_is_binary() {
        return Err(Error::Argument(
            "compliance score needs a binary instrument".into(),
        ));
    }
    let (h0, h1) = h_model.predict_arms(&data.x)?;
    Ok(compliance_from_arms(&h0, &h1, &data.z))
}

/// Out-of-fold nuisance values, one entry per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSet {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    /// `h(Z_i, X_i)`
    pub h: Vec<f64>,
    /// `h(0, X_i)` and `h(1, X_i)` when the instrument is binary.
    pub h_arms: Option<(Vec<f64>, Vec<f64>)>,
    /// `E[T Z | X]`
    pub tz_moment: Vec<f64>,
    pub beta: Vec<f64>,
    pub v: Vec<f64>,
    pub delta: Option<Vec<f64>>,
    pub theta_pre: Option<Vec<f64>>,
    /// Instrument model trained on each fold's complement.
    #[serde(skip)]
    pub h_models: Vec<InstrumentModel>,
}

impl NuisanceSet {
    pub fn n(&self) -> usize {
        self.q.len()
    }

    /// Assemble from pointwise values, deriving `beta = tz_moment - p r`.
    /// Used for oracle nuisances and in tests.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        q: Vec<f64>,
        p: Vec<f64>,
        r: Vec<f64>,
        h: Vec<f64>,
        tz_moment: Vec<f64>,
        v: Vec<f64>,
    ) -> Result<Self> {
        let n = q.len();
        for (name, len) in [
            ("p", p.len()),
            ("r", r.len()),
            ("h", h.len()),
            ("tz_moment", tz_moment.len()),
            ("v", v.len()),
        ] {
            if len != n {
                return Err(Error::Argument(format!(
                    "nuisance `{name}` has {len} values, expected {n}"
                )));
            }
        }
        let beta = beta_from(&tz_moment, &p, &r);
        Ok(Self {
            q,
            p,
            r,
            h,
            h_arms: None,
            tz_moment,
            beta,
            v: v.into_iter().map(|x| x.max(0.0)).collect(),
            delta: None,
            theta_pre: None,
            h_models: Vec::new(),
        })
    }

    pub fn with_theta_pre(mut self, theta_pre: Vec<f64>) -> Self {
        self.theta_pre = Some(theta_pre);
        self
    }

    /// Write one column per nuisance.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["q", "p", "r", "h", "tz_moment", "beta", "v"];
        if self.delta.is_some() {
            header.push("delta");
        }
        if self.theta_pre.is_some() {
            header.push("theta_pre");
        }
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![
                self.q[i],
                self.p[i],
                self.r[i],
                self.h[i],
                self.tz_moment[i],
                self.beta[i],
                self.v[i],
            ];
            if let Some(d) = &self.delta {
                rec.push(d[i]);
            }
            if let Some(t) = &self.theta_pre {
                rec.push(t[i]);
            }
            w.write_record(rec.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn beta_from(tz: &[f64], p: &[f64], r: &[f64]) -> Vec<f64> {
    tz.iter()
        .zip(p.iter().zip(r))
        .map(|(f, (p, r))| f - p * r)
        .collect()
}

struct FoldFit {
    rows: Vec<usize>,
    q: Vec<f64>,
    p: Vec<f64>,
    r: Vec<f64>,
    h: Vec<f64>,
    arms: Option<(Vec<f64>, Vec<f64>)>,
    tz: Vec<f64>,
    h_model: InstrumentModel,
}

fn check_plan(data: &IvDataset, plan: &SplitPlan) -> Result<()> {
    if plan.n() != data.n() {
        return Err(Error::Argument(format!(
            "split plan covers {} rows but the data has {}",
            plan.n(),
            data.n()
        )));
    }
    Ok(())
}

fn check_fixed_r(fixed_r: Option<f64>) -> Result<()> {
    if let Some(r) = fixed_r {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::Argument(format!(
                "fixed instrument propensity must lie in (0, 1), got {r}"
            )));
        }
    }
    Ok(())
}

fn fit_predict(
    name: &str,
    spec: &LearnerSpec,
    xt: &DMatrix<f64>,
    labels: &[f64],
    xs: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    fit_learner(spec, xt, labels, None)
        .and_then(|m| m.predict(xs))
        .map_err(|e| e.in_nuisance(name))
}

fn scatter(n: usize, folds: &[FoldFit], get: impl Fn(&FoldFit) -> &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for f in folds {
        for (&i, &v) in f.rows.iter().zip(get(f)) {
            out[i] = v;
        }
    }
    out
}

/// Cross-fitted regression of `labels` on `x`.
pub fn cross_fit(
    spec: &LearnerSpec,
    x: &DMatrix<f64>,
    labels: &[f64],
    plan: &SplitPlan,
) -> Result<Vec<f64>> {
    let parts = par::try_map(plan.k, |k| {
        let train = plan.train_rows(k);
        let test = plan.test_rows(k);
        let lt: Vec<f64> = train.iter().map(|&i| labels[i]).collect();
        let m = fit_learner(spec, &select_rows(x, &train), &lt, None)?;
        Ok((test.clone(), m.predict(&select_rows(x, &test))?))
    })?;
    let mut out = vec![0.0; labels.len()];
    for (rows, preds) in parts {
        for (i, v) in rows.into_iter().zip(preds) {
            out[i] = v;
        }
    }
    Ok(out)
}

/// Fit every nuisance out-of-fold. `fixed_r` replaces the `r` regression by
/// a known constant instrument propensity.
pub fn fit_nuisances(
    data: &IvDataset,
    specs: &NuisanceSpecs,
    plan: &SplitPlan,
    fixed_r: Option<f64>,
) -> Result<NuisanceSet> {
    check_plan(data, plan)?;
    check_fixed_r(fixed_r)?;
    specs.validate()?;
    let binary_z = data.instrument_is_binary();
    let tz: Vec<f64> = data.t.iter().zip(&data.z).map(|(t, z)| t * z).collect();
    let folds = par::try_map(plan.k, |k| {
        let train = plan.train_rows(k);
        let test = plan.test_rows(k);
        let xt = select_rows(&data.x, &train);
        let xs = select_rows(&data.x, &test);
        let pick = |v: &[f64]| -> Vec<f64> { train.iter().map(|&i| v[i]).collect() };
        let (yt, tt, zt) = (pick(&data.y), pick(&data.t), pick(&data.z));
        let q = fit_predict("q", &specs.q, &xt, &yt, &xs)?;
        let p = fit_predict("p", &specs.p, &xt, &tt, &xs)?;
        let r = match fixed_r {
            Some(r) => vec![r; test.len()],
            None => fit_predict("r", &specs.r, &xt, &zt, &xs)?,
        };
        let tzf = fit_predict("tz_moment", &specs.tz_moment, &xt, &pick(&tz), &xs)?;
        let h_model = InstrumentModel::fit(&specs.h, &xt, &tt, &zt, binary_z)
            .map_err(|e| e.in_nuisance("h"))?;
        let zs: Vec<f64> = test.iter().map(|&i| data.z[i]).collect();
        let h = h_model.predict(&xs, &zs).map_err(|e| e.in_nuisance("h"))?;
        let arms = if binary_z {
            Some(h_model.predict_arms(&xs).map_err(|e| e.in_nuisance("h"))?)
        } else {
            None
        };
        Ok(FoldFit {
            rows: test,
            q,
            p,
            r,
            h,
            arms,
            tz: tzf,
            h_model,
        })
    })?;
    let n = data.n();
    let q = scatter(n, &folds, |f| &f.q);
    let p = scatter(n, &folds, |f| &f.p);
    let r = scatter(n, &folds, |f| &f.r);
    let h = scatter(n, &folds, |f| &f.h);
    let tz_moment = scatter(n, &folds, |f| &f.tz);
    let h_arms = binary_z.then(|| {
        (
            scatter(n, &folds, |f| &f.arms.as_ref().unwrap().0),
            scatter(n, &folds, |f| &f.arms.as_ref().unwrap().1),
        )
    });
    let gap_sq: Vec<f64> = h.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).collect();
    let v = cross_fit(&specs.q, &data.x, &gap_sq, plan)
        .map_err(|e| e.in_nuisance("v"))?
        .into_iter()
        .map(|v| v.max(V_FLOOR))
        .collect();
    let delta = h_arms
        .as_ref()
        .map(|(h0, h1)| compliance_from_arms(h0, h1, &data.z).delta);
    let beta = beta_from(&tz_moment, &p, &r);
    Ok(NuisanceSet {
        q,
        p,
        r,
        h,
        h_arms,
        tz_moment,
        beta,
        v,
        delta,
        theta_pre: None,
        h_models: folds.into_iter().map(|f| f.h_model).collect(),
    })
}

/// Nuisances for a randomized binary instrument with known propensity `r`:
/// only `q` and the per-arm `h` are learned. Everything else follows from
/// `h(0,X)`, `h(1,X)` and `r`.
pub fn fit_binary_nuisances(
    data: &IvDataset,
    specs: &NuisanceSpecs,
    plan: &SplitPlan,
    r: f64,
) -> Result<NuisanceSet> {
    check_plan(data, plan)?;
    check_fixed_r(Some(r))?;
    specs.validate()?;
    if !data.instrument_is_binary() || !data.treatment_is_binary() {
        return Err(Error::Argument(
            "the binary pipeline needs 0/1 treatment and instrument".into(),
        ));
    }
    let folds = par::try_map(plan.k, |k| {
        let train = plan.train_rows(k);
        let test = plan.test_rows(k);
        let xt = select_rows(&data.x, &train);
        let xs = select_rows(&data.x, &test);
        let pick = |v: &[f64]| -> Vec<f64> { train.iter().map(|&i| v[i]).collect() };
        let q = fit_predict("q", &specs.q, &xt, &pick(&data.y), &xs)?;
        let h_model = InstrumentModel::fit(&specs.h, &xt, &pick(&data.t), &pick(&data.z), true)
            .map_err(|e| e.in_nuisance("h"))?;
        let (h0, h1) = h_model.predict_arms(&xs).map_err(|e| e.in_nuisance("h"))?;
        let h = test
            .iter()
            .enumerate()
            .map(|(j, &i)| if data.z[i] == 1.0 { h1[j] } else { h0[j] })
            .collect();
        Ok(FoldFit {
            rows: test,
            q,
            p: Vec::new(),
            r: Vec::new(),
            h,
            arms: Some((h0, h1)),
            tz: Vec::new(),
            h_model,
        })
    })?;
    let n = data.n();
    let q = scatter(n, &folds, |f| &f.q);
    let h = scatter(n, &folds, |f| &f.h);
    let h0 = scatter(n, &folds, |f| &f.arms.as_ref().unwrap().0);
    let h1 = scatter(n, &folds, |f| &f.arms.as_ref().unwrap().1);
    let p: Vec<f64> = h0.iter().zip(&h1).map(|(a, b)| r * b + (1.0 - r) * a).collect();
    let tz_moment: Vec<f64> = h1.iter().map(|b| r * b).collect();
    let rv = vec![r; n];
    let beta = beta_from(&tz_moment, &p, &rv);
    let v = h0
        .iter()
        .zip(&h1)
        .map(|(a, b)| (r * (1.0 - r) * (b - a).powi(2)).max(V_FLOOR))
        .collect();
    let delta = compliance_from_arms(&h0, &h1, &data.z).delta;
    Ok(NuisanceSet {
        q,
        p,
        r: rv,
        h,
        h_arms: Some((h0, h1)),
        tz_moment,
        beta,
        v,
        delta: Some(delta),
        theta_pre: None,
        h_models: folds.into_iter().map(|f| f.h_model).collect(),
    })
}

/// Residualized outcome, treatment and instruments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `Y - q(X)`
    pub y_res: Vec<f64>,
    /// `T - p(X)`
    pub t_res: Vec<f64>,
    /// `Z - r(X)`
    pub z_res: Vec<f64>,
    /// `h(Z, X) - p(X)`
    pub z_pi_res: Vec<f64>,
}

impl Residuals {
    pub fn n(&self) -> usize {
        self.y_res.len()
    }
}

pub fn compute_residuals(data: &IvDataset, nuisances: &NuisanceSet) -> Result<Residuals> {
    if nuisances.n() != data.n() {
        return Err(Error::Argument(format!(
            "nuisances cover {} rows but the data has {}",
            nuisances.n(),
            data.n()
        )));
    }
    let diff = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(u, v)| u - v).collect() };
    Ok(Residuals {
        y_res: diff(&data.y, &nuisances.q),
        t_res: diff(&data.t, &nuisances.p),
        z_res: diff(&data.z, &nuisances.r),
        z_pi_res: diff(&nuisances.h, &nuisances.p),
    })
}
