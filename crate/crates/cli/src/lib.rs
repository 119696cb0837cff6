//! Command implementations behind the `ivcate` binary.
//!
//! Settings come from three layers: command-line flags, an optional flat
//! config file, and built-in defaults, in that order of precedence. The
//! resolved [`RunConfig`] is embedded in every report, and passing a report
//! back through `--config` reruns the same command with the same settings.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use ivcate::cate::HypothesisSpace;
use ivcate::crossfit::NuisanceSpecs;
use ivcate::dataset::{load_csv, Schema};
use ivcate::dgp::{generate, nlsym_columns, tripadvisor_columns, DgpFamily, DgpSpec};
use ivcate::driv::NuisanceMode;
use ivcate::error::{Error, Result};
use ivcate::harness::{
    orthogonality_matrix, run_coverage, CoverageConfig, CoverageReport, Direction, Loss,
    OrthogonalityProblem, OrthogonalityReport,
};
use ivcate::learners::{ForestParams, GbtParams, LearnerSpec};
use ivcate::pipeline::{run, EstimatorConfig, Variant};
use ivcate::report::{to_json, RunReport};

pub const SEED_ENV: &str = "IVCATE_SEED";

#[derive(Debug, Parser)]
#[command(name = "ivcate", version, about = "Instrumented heterogeneous treatment effects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate effects on a CSV file.
    Fit(Flags),
    /// Draw a synthetic dataset and write it with its ground truth.
    Simulate(Flags),
    /// Monte Carlo coverage of DMLATEIV and DRIV on a synthetic family.
    Coverage(Flags),
    /// Run an orthogonality and coverage test matrix.
    Verify(Flags),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Simulate(_) => "simulate",
            Command::Coverage(_) => "coverage",
            Command::Verify(_) => "verify",
        }
    }

    pub fn flags(&self) -> &Flags {
        match self {
            Command::Fit(f) | Command::Simulate(f) | Command::Coverage(f) | Command::Verify(f) => f,
        }
    }
}

/// Flags shared by every command. Every field is optional so that a config
/// file can supply it.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flags {
    /// Config file: flat TOML, or a JSON report whose `config` is reused.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub outcome: Option<String>,
    #[arg(long)]
    pub treatment: Option<String>,
    #[arg(long)]
    pub instrument: Option<String>,
    /// dmlateiv, dmliv, driv, driv_rw or projected_driv_rw
    #[arg(long)]
    pub variant: Option<String>,
    /// constant, linear, linear_subset=<cols>, forest or lasso
    #[arg(long)]
    pub space: Option<String>,
    /// Space of the preliminary DMLIV estimate.
    #[arg(long)]
    pub pre_space: Option<String>,
    /// Nuisance learner for every regression: ols, ridge, lasso, gbt or forest.
    #[arg(long)]
    pub learner: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub beta_min: Option<f64>,
    /// Known `Pr[Z = 1]` of a randomized binary instrument.
    #[arg(long)]
    pub binary_r: Option<f64>,
    /// Quantile-normalize features read from CSV into this many levels.
    #[arg(long)]
    pub quantiles: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub threads: Option<usize>,
    /// tripadvisor, coverage or nlsym
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub endogeneity: Option<f64>,
    /// Replace additive outcome noise with its mean.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_noise: Option<bool>,
    #[arg(long)]
    pub covariate_seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// default, orthogonality, coverage or a single `<loss>/<direction>` pair.
    #[arg(long)]
    pub matrix: Option<String>,
}

impl Flags {
    /// Fills every unset field from `other`.
    fn or(self, other: Flags) -> Flags {
        macro_rules! pick {
            ($($f:ident),*) => { Flags { $($f: self.$f.or(other.$f)),* } };
        }
        pick!(
            config, data, out, outcome, treatment, instrument, variant, space, pre_space, learner,
            folds, seed, level, beta_min, binary_r, quantiles, threads, family, n, endogeneity,
            no_noise, covariate_seed, replicates, matrix
        )
    }
}

/// Fully resolved settings of one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub outcome: String,
    pub treatment: String,
    pub instrument: String,
    pub variant: String,
    pub space: String,
    pub pre_space: String,
    pub learner: String,
    pub folds: usize,
    pub seed: u64,
    pub level: f64,
    pub beta_min: Option<f64>,
    pub binary_r: Option<f64>,
    pub quantiles: Option<usize>,
    pub family: String,
    pub n: usize,
    pub endogeneity: Option<f64>,
    pub no_noise: bool,
    pub covariate_seed: u64,
    pub replicates: usize,
    pub matrix: String,
}

impl From<RunConfig> for Flags {
    fn from(c: RunConfig) -> Self {
        Flags {
            config: None,
            data: c.data,
            out: c.out,
            outcome: Some(c.outcome),
            treatment: Some(c.treatment),
            instrument: Some(c.instrument),
            variant: Some(c.variant),
            space: Some(c.space),
            pre_space: Some(c.pre_space),
            learner: Some(c.learner),
            folds: Some(c.folds),
            seed: Some(c.seed),
            level: Some(c.level),
            beta_min: c.beta_min,
            binary_r: c.binary_r,
            quantiles: c.quantiles,
            threads: None,
            family: Some(c.family),
            n: Some(c.n),
            endogeneity: c.endogeneity,
            no_noise: Some(c.no_noise),
            covariate_seed: Some(c.covariate_seed),
            replicates: Some(c.replicates),
            matrix: Some(c.matrix),
        }
    }
}

fn read_config_file(path: &Path) -> Result<Flags> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let inner = value.get("config").cloned().unwrap_or(value);
        let resolved: RunConfig =
            serde_json::from_value(inner).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(resolved.into())
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Merges flags over the config file over defaults. The seed falls back to
/// `env_seed` when neither flags nor file set it.
pub fn resolve(command: &str, flags: &Flags, env_seed: Option<&str>) -> Result<RunConfig> {
    let file = match &flags.config {
        Some(path) => read_config_file(path)?,
        None => Flags::default(),
    };
    let f = flags.clone().or(file);
    let seed = match (f.seed, env_seed) {
        (Some(s), _) => s,
        (None, Some(v)) => v
            .trim()
            .parse()
            .map_err(|_| Error::Argument(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?,
        (None, None) => 0,
    };
    Ok(RunConfig {
        data: f.data,
        out: f.out,
        outcome: f.outcome.unwrap_or_else(|| "y".into()),
        treatment: f.treatment.unwrap_or_else(|| "t".into()),
        instrument: f.instrument.unwrap_or_else(|| "z".into()),
        variant: f.variant.unwrap_or_else(|| "driv".into()),
        space: f.space.unwrap_or_else(|| "constant".into()),
        pre_space: f.pre_space.unwrap_or_else(|| "linear".into()),
        learner: f.learner.unwrap_or_else(|| "ols".into()),
        folds: f.folds.unwrap_or(2),
        seed,
        level: f.level.unwrap_or(0.95),
        beta_min: f.beta_min,
        binary_r: f.binary_r,
        quantiles: f.quantiles,
        family: f.family.unwrap_or_else(|| "coverage".into()),
        n: f.n.unwrap_or(if command == "verify" { 20_000 } else { 10_000 }),
        endogeneity: f.endogeneity,
        no_noise: f.no_noise.unwrap_or(false),
        covariate_seed: f.covariate_seed.unwrap_or(0),
        replicates: f.replicates.unwrap_or(100),
        matrix: f.matrix.unwrap_or_else(|| "default".into()),
    })
}

/// Parses a hypothesis space name. `linear_subset=` takes comma-separated
/// feature names or column indices.
pub fn parse_space(name: &str, features: &[String], seed: u64) -> Result<HypothesisSpace> {
    if let Some(list) = name.strip_prefix("linear_subset=") {
        let cols = list
            .split(',')
            .map(|c| {
                let c = c.trim();
                features
                    .iter()
                    .position(|f| f == c)
                    .or_else(|| c.parse().ok())
                    .ok_or_else(|| Error::Argument(format!("unknown feature `{c}` in linear_subset")))
            })
            .collect::<Result<Vec<usize>>>()?;
        return Ok(HypothesisSpace::LinearSubset { features: cols });
    }
    match name {
        "constant" => Ok(HypothesisSpace::Constant),
        "linear" => Ok(HypothesisSpace::Linear),
        "lasso" => Ok(HypothesisSpace::LassoLinear),
        "forest" => Ok(HypothesisSpace::TreeEnsemble {
            learner: LearnerSpec::ShallowForest(ForestParams {
                seed,
                ..ForestParams::default()
            }),
        }),
        other => Err(Error::Argument(format!(
            "unknown space `{other}` (expected constant, linear, linear_subset=<cols>, forest or lasso)"
        ))),
    }
}

pub fn parse_learner(name: &str, seed: u64) -> Result<LearnerSpec> {
    let grid = vec![0.001, 0.01, 0.1, 1.0, 10.0, 100.0];
    match name {
        "ols" => Ok(LearnerSpec::Ols),
        "ridge" => Ok(LearnerSpec::Ridge { lambda: 1.0, cv_grid: grid }),
        "lasso" => Ok(LearnerSpec::Lasso { lambda: 0.01, cv_grid: grid }),
        "gbt" => Ok(LearnerSpec::GbtRegressor(GbtParams::default())),
        "forest" => Ok(LearnerSpec::ShallowForest(ForestParams {
            seed,
            ..ForestParams::default()
        })),
        other => Err(Error::Argument(format!(
            "unknown learner `{other}` (expected ols, ridge, lasso, gbt or forest)"
        ))),
    }
}

pub fn estimator_config(cfg: &RunConfig, features: &[String]) -> Result<EstimatorConfig> {
    Ok(EstimatorConfig {
        variant: Variant::parse(&cfg.variant)?,
        space: parse_space(&cfg.space, features, cfg.seed)?,
        pre_space: parse_space(&cfg.pre_space, features, cfg.seed)?,
        nuisances: NuisanceSpecs::uniform(parse_learner(&cfg.learner, cfg.seed)?),
        mode: match cfg.binary_r {
            Some(r) => NuisanceMode::Binary { r },
            None => NuisanceMode::default(),
        },
        folds: cfg.folds,
        seed: cfg.seed,
        level: cfg.level,
        beta_min: cfg.beta_min,
    })
}

fn dgp_spec(cfg: &RunConfig) -> Result<DgpSpec> {
    let family = DgpFamily::parse(&cfg.family)?;
    let mut spec = DgpSpec::new(family, cfg.n, cfg.seed);
    if let Some(e) = cfg.endogeneity {
        spec.endogeneity_coef = e;
    }
    spec.noise = !cfg.no_noise;
    spec.covariate_seed = cfg.covariate_seed;
    spec.validate()?;
    Ok(spec)
}

/// Result of a command: the JSON document and whether its checks passed.
#[derive(Debug)]
pub struct Outcome {
    pub json: String,
    pub pass: bool,
}

fn finish<R: Serialize>(command: &str, cfg: &RunConfig, result: R, pass: bool) -> Result<Outcome> {
    let report = RunReport::new(command, cfg.seed, cfg, result);
    Ok(Outcome {
        json: to_json(&report)?,
        pass,
    })
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<Outcome> {
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Argument("fit needs --data".into()))?;
    let mut schema = Schema::new(&cfg.outcome, &cfg.treatment, &cfg.instrument);
    schema.quantiles = cfg.quantiles;
    let data = load_csv(path, &schema)?;
    let est = estimator_config(cfg, &data.column_names)?;
    let out = run(&data, &est)?;
    finish("fit", cfg, out.report, true)
}

#[derive(Debug, Serialize)]
struct SimulateResult<'a> {
    csv: Option<String>,
    truth_file: Option<String>,
    n: usize,
    columns: &'a [String],
    truth: &'a ivcate::dgp::GroundTruth,
}

/// Path of the ground-truth file written next to a simulated CSV.
pub fn truth_path(csv: &Path) -> PathBuf {
    csv.with_extension("truth.json")
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Outcome> {
    let sim = generate(&dgp_spec(cfg)?)?;
    let truth_file = cfg.out.as_deref().map(truth_path);
    if let Some(out) = &cfg.out {
        sim.data.save_csv(out)?;
    }
    let result = SimulateResult {
        csv: cfg.out.as_ref().map(|p| p.display().to_string()),
        truth_file: truth_file.as_ref().map(|p| p.display().to_string()),
        n: sim.data.n(),
        columns: &sim.data.column_names,
        truth: &sim.truth,
    };
    if let Some(path) = &truth_file {
        fs::write(path, to_json(&sim.truth)?)?;
    }
    finish("simulate", cfg, result, true)
}

fn coverage_reports(cfg: &RunConfig) -> Result<Vec<CoverageReport>> {
    let dgp = dgp_spec(cfg)?;
    let names = match dgp.family {
        DgpFamily::Nlsym => nlsym_columns(),
        _ => tripadvisor_columns(),
    };
    let estimator = estimator_config(cfg, &names)?;
    run_coverage(&CoverageConfig {
        dgp,
        estimator,
        replicates: cfg.replicates,
        seed: cfg.seed,
    })
}

pub fn cmd_coverage(cfg: &RunConfig) -> Result<Outcome> {
    finish("coverage", cfg, coverage_reports(cfg)?, true)
}

/// Nominal-coverage band for the DRIV run of `verify`.
pub const VERIFY_COVERAGE: (f64, f64) = (0.85, 1.0);

#[derive(Debug, Serialize)]
struct VerifyResult {
    pass: bool,
    failures: Vec<String>,
    orthogonality: Vec<OrthogonalityReport>,
    coverage: Option<Vec<CoverageReport>>,
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<Outcome> {
    let (pairs, with_coverage): (Vec<(Loss, Direction)>, bool) = match cfg.matrix.as_str() {
        "default" => (orthogonality_matrix(), true),
        "orthogonality" => (orthogonality_matrix(), false),
        "coverage" => (Vec::new(), true),
        other => match other.split_once('/') {
            Some((l, d)) => (vec![(Loss::parse(l)?, Direction::parse(d)?)], false),
            None => {
                return Err(Error::Argument(format!(
                    "unknown matrix `{other}` (expected default, orthogonality, coverage or <loss>/<direction>)"
                )))
            }
        },
    };
    let mut failures = Vec::new();
    let mut orthogonality = Vec::new();
    if !pairs.is_empty() {
        let mut spec = DgpSpec::new(DgpFamily::Coverage, cfg.n, cfg.seed);
        if let Some(e) = cfg.endogeneity {
            spec.endogeneity_coef = e;
        }
        let sim = generate(&spec)?;
        let problem = OrthogonalityProblem {
            sim: &sim,
            basis: vec![0, 7],
            direction_feature: 0,
        };
        let grid = ivcate::harness::default_t_grid();
        for (loss, dir) in pairs {
            let report = problem.slope(loss, dir, &grid)?;
            if !report.pass {
                failures.push(format!("{}/{}", loss.name(), dir.name()));
            }
            orthogonality.push(report);
        }
    }
    let coverage = if with_coverage {
        let reports = coverage_reports(&RunConfig {
            family: "coverage".into(),
            ..cfg.clone()
        })?;
        for r in &reports {
            if r.failures > 0 {
                failures.push(format!("{}: {} failed replicates", r.estimator, r.failures));
            }
        }
        if let Some(dr) = reports.iter().find(|r| r.estimator == "driv") {
            if dr.coverage < VERIFY_COVERAGE.0 || dr.coverage > VERIFY_COVERAGE.1 {
                failures.push(format!("driv coverage {:.3}", dr.coverage));
            }
        }
        Some(reports)
    } else {
        None
    };
    let pass = failures.is_empty();
    let result = VerifyResult {
        pass,
        failures,
        orthogonality,
        coverage,
    };
    finish("verify", cfg, result, pass)
}

/// Runs a parsed command and writes its report to `--out` (fit, coverage,
/// verify) or returns it for printing.
pub fn execute(command: &Command, env_seed: Option<&str>) -> Result<Outcome> {
    let cfg = resolve(command.name(), command.flags(), env_seed)?;
    let outcome = match command {
        Command::Fit(_) => cmd_fit(&cfg)?,
        Command::Simulate(_) => cmd_simulate(&cfg)?,
        Command::Coverage(_) => cmd_coverage(&cfg)?,
        Command::Verify(_) => cmd_verify(&cfg)?,
    };
    if let (Some(out), false) = (&cfg.out, matches!(command, Command::Simulate(_))) {
        fs::write(out, &outcome.json)?;
    }
    Ok(outcome)
}

/// Machine-readable error object printed on failure.
pub fn error_json(err: &Error) -> String {
    let value = serde_json::json!({
        "error": { "kind": err.kind(), "message": err.to_string() }
    });
    format!("{value}\n")
}
