//! The seven subcommands. Each returns the value to print on stdout;
//! artifact writing happens here so the validation suites can invoke
//! commands in-process without duplicating plumbing.

use std::path::{Path, PathBuf};

use clap::Args;
use nalgebra::{DMatrix, DVector};
use psou::calibration::{empirical_moments, mom_fit};
use psou::driftop::{extract_generator, DriftOperator};
use psou::oup::{monte_carlo_moments, sample_stationary_with_lags, simulate_path, stationary_moments};
use psou::rng;
use psou::subordinators::{
    build_multivariate_subordinator, cp_factorize, default_cp_rank, mixture_qv_moments,
    CpFactorization, MixingLaw, QvDriverKind,
};
use psou::symcore::{PsdMat, SymMat};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{companion, env_output_dir, load_config, load_json, resolve_out, OutputConfig};
use crate::emit;
use crate::validate::run_suite;
use crate::CliError;

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Experiment configuration (JSON).
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Overrides run.seed from the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Path CSV artifact [default: path.csv under the output directory].
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Jump log CSV [default: <out stem>.jumps.csv].
    #[arg(long, value_name = "FILE")]
    pub jumps_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MomentsArgs {
    /// Experiment configuration (JSON); lags come from run.lags.
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Moment report JSON [default: moments.json under the output directory].
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// Experiment configuration (JSON); needs run.n_samples.
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Overrides run.seed from the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Draws CSV artifact [default: draws.csv under the output directory].
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Monte Carlo moment report JSON [default: <out stem>.moments.json].
    #[arg(long, value_name = "FILE")]
    pub report_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Moment report JSON written by moments or sample-stationary.
    #[arg(long, value_name = "FILE", conflicts_with = "draws")]
    pub moments: Option<PathBuf>,
    /// State CSV to estimate moments from: a path CSV (its rows are
    /// filtered to the regular grid) or any uniformly spaced state CSV.
    #[arg(long, value_name = "FILE")]
    pub draws: Option<PathBuf>,
    /// Time between consecutive grid states in the draws CSV.
    #[arg(long, requires = "draws")]
    pub spacing: Option<f64>,
    /// Autocovariance lags in grid steps, e.g. --lag-steps 1,5.
    #[arg(long, value_delimiter = ',', requires = "draws")]
    pub lag_steps: Vec<usize>,
    /// Leading grid states dropped before estimation.
    #[arg(long, default_value_t = 0, requires = "draws")]
    pub burn: usize,
    /// Estimate JSON [default: fit.json under the output directory].
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SubordinatorArgs {
    /// Subordinator task configuration (JSON).
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Result JSON [default: subordinator.json under the output directory].
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Semigroup probe configuration (JSON) with the drift to probe.
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Recovery JSON [default: extract_op.json under the output directory].
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// One of: remark410b, kernel, moments-mc, extraction, construction,
    /// roundtrip, psd, bessel, factorization, momfit, determinism, all.
    #[arg(long)]
    pub suite: String,
    /// Report JSON [default: validate_<suite>.json under the output directory].
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

fn num(e: psou::Error) -> CliError {
    CliError::Numerical(e.to_string())
}

fn write_artifact(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Io(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, contents)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

pub fn simulate(args: &SimulateArgs) -> Result<Value, CliError> {
    let cfg = load_config(&args.config)?;
    let horizon = cfg
        .run
        .horizon
        .ok_or_else(|| CliError::Config("run.horizon is required for simulate".into()))?;
    let seed = args.seed.unwrap_or(cfg.run.seed);
    let env_dir = env_output_dir();
    let out = resolve_out(args.out.as_deref(), &cfg.output, "path.csv", env_dir.as_deref());
    let jumps_out = match &args.jumps_out {
        Some(p) => resolve_out(Some(p), &cfg.output, "jumps.csv", env_dir.as_deref()),
        None => companion(&out, "jumps.csv"),
    };

    let mut r = rng::stream(seed, 0);
    let path = simulate_path(&cfg.model, horizon, &mut r).map_err(num)?;
    write_artifact(&out, &emit::path_csv(&path))?;
    write_artifact(&jumps_out, &emit::jumps_csv(&path.jumps, cfg.model.dim()))?;
    Ok(json!({
        "artifacts": { "path_csv": path_str(&out), "jumps_csv": path_str(&jumps_out) },
        "states": path.states.len(),
        "jumps": path.jumps.len(),
        "seed": seed,
    }))
}

pub fn moments(args: &MomentsArgs) -> Result<Value, CliError> {
    let cfg = load_config(&args.config)?;
    let env_dir = env_output_dir();
    let out = resolve_out(args.out.as_deref(), &cfg.output, "moments.json", env_dir.as_deref());
    let report =
        stationary_moments(&cfg.model.drift, &cfg.model.driver, &cfg.run.lags).map_err(num)?;
    let value = serde_json::to_value(emit::MomentReportJson::from_report(&report))
        .expect("report encode");
    write_artifact(&out, &emit::to_json(&value))?;
    Ok(json!({ "artifacts": { "moments_json": path_str(&out) } }))
}

pub fn sample_stationary(args: &SampleArgs) -> Result<Value, CliError> {
    let cfg = load_config(&args.config)?;
    let n = cfg
        .run
        .n_samples
        .ok_or_else(|| CliError::Config("run.n_samples is required for sample-stationary".into()))?;
    let seed = args.seed.unwrap_or(cfg.run.seed);
    let env_dir = env_output_dir();
    let out = resolve_out(args.out.as_deref(), &cfg.output, "draws.csv", env_dir.as_deref());
    let report_out = match &args.report_out {
        Some(p) => resolve_out(Some(p), &cfg.output, "draws.moments.json", env_dir.as_deref()),
        None => companion(&out, "moments.json"),
    };

    // Both artifacts rest on the same stream, so the report describes
    // exactly the draws written to the CSV.
    let mut r = rng::stream(seed, 0);
    let sample = sample_stationary_with_lags(&cfg.model, n, &cfg.run.lags, &mut r).map_err(num)?;
    let mut r = rng::stream(seed, 0);
    let report = monte_carlo_moments(&cfg.model, n, &cfg.run.lags, &mut r).map_err(num)?;

    write_artifact(&out, &emit::draws_csv(&sample.draws))?;
    let value = serde_json::to_value(emit::MomentReportJson::from_report(&report))
        .expect("report encode");
    write_artifact(&report_out, &emit::to_json(&value))?;
    Ok(json!({
        "artifacts": { "draws_csv": path_str(&out), "moments_json": path_str(&report_out) },
        "draws": n,
        "burn_in": sample.burn_in,
        "spacing": sample.spacing,
        "seed": seed,
    }))
}

pub fn fit(args: &FitArgs) -> Result<Value, CliError> {
    let env_dir = env_output_dir();
    let output = OutputConfig::default();
    let out = resolve_out(args.out.as_deref(), &output, "fit.json", env_dir.as_deref());

    let report = match (&args.moments, &args.draws) {
        (Some(path), None) => {
            let parsed: emit::MomentReportJson = load_json(path)?;
            parsed.into_report()?
        }
        (None, Some(path)) => {
            let spacing = args.spacing.ok_or_else(|| {
                CliError::Config("--spacing is required when fitting from a draws CSV".into())
            })?;
            if args.lag_steps.is_empty() {
                return Err(CliError::Config(
                    "--lag-steps is required when fitting from a draws CSV".into(),
                ));
            }
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let csv = emit::read_state_csv(&text, &path.display().to_string())?;
            let states = if csv.leading == "time" {
                emit::grid_rows(&csv.first_column, &csv.states, spacing)?
            } else {
                csv.states
            };
            if args.burn >= states.len() {
                return Err(CliError::Config(format!(
                    "--burn {} discards all {} grid states",
                    args.burn,
                    states.len()
                )));
            }
            empirical_moments(&states[args.burn..], spacing, &args.lag_steps).map_err(num)?
        }
        (None, None) => {
            return Err(CliError::Config(
                "fit needs --moments or --draws".into(),
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    };

    let estimate = mom_fit(&report).map_err(num)?;
    write_artifact(&out, &emit::to_json(&emit::estimate_value(&estimate)))?;
    Ok(json!({
        "artifacts": { "fit_json": path_str(&out) },
        "stable": estimate.stable,
        "used_lag": estimate.used_lag,
    }))
}

/// What the subordinator subcommand should do.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubordinatorConfig {
    pub task: SubordinatorTask,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SubordinatorTask {
    /// Search for a nonnegative factor `C = B B^T`.
    Factorize {
        c: SymMat,
        #[serde(default)]
        rank: Option<usize>,
        #[serde(default)]
        tol: Option<f64>,
    },
    /// Build the compound Poisson model hitting mean `mu` and covariance
    /// `B B^T` at unit time.
    Build { mu: Vec<f64>, b: Vec<Vec<f64>> },
    /// Closed-form unit-time moments of a quadratic-variation driver.
    QvMoments {
        driver: QvKindConfig,
        mixing: MixingLaw,
        c: PsdMat,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QvKindConfig {
    CompoundPoisson { rate: f64 },
    TypeGbar,
}

pub fn subordinator(args: &SubordinatorArgs) -> Result<Value, CliError> {
    let cfg: SubordinatorConfig = load_json(&args.config)?;
    let env_dir = env_output_dir();
    let output = OutputConfig::default();
    let out = resolve_out(args.out.as_deref(), &output, "subordinator.json", env_dir.as_deref());

    let result = match cfg.task {
        SubordinatorTask::Factorize { c, rank, tol } => {
            let rank = rank.unwrap_or_else(|| default_cp_rank(c.dim()));
            let tol = tol.unwrap_or(1e-8);
            let outcome = cp_factorize(&c, rank, tol).map_err(num)?;
            let (status, b, residual) = match outcome {
                CpFactorization::Found { b, residual } => {
                    ("found", Some(emit::mat_rows(&b)), residual)
                }
                CpFactorization::NotFound { best_residual } => ("not_found", None, best_residual),
            };
            json!({
                "task": "factorize",
                "c": emit::sym_rows(&c),
                "rank": rank,
                "tol": tol,
                "status": status,
                "b": b,
                "residual": residual,
            })
        }
        SubordinatorTask::Build { mu, b } => {
            let b = emit::rows_to_dmatrix(&b, "b")?;
            let mu = DVector::from_vec(mu);
            let model = build_multivariate_subordinator(&mu, &b).map_err(num)?;
            let moments = model.moments().map_err(num)?;
            json!({
                "task": "build",
                "model": serde_json::to_value(&model).expect("model encode"),
                "moments": {
                    "mean": emit::sym_rows(&moments.mean),
                    "var_vec": emit::mat_rows(&moments.var_vec),
                    "gamma": emit::sym_rows(&moments.gamma),
                },
            })
        }
        SubordinatorTask::QvMoments { driver, mixing, c } => {
            let kind = match driver {
                QvKindConfig::CompoundPoisson { rate } => QvDriverKind::CompoundPoisson { rate },
                QvKindConfig::TypeGbar => QvDriverKind::TypeGbar,
            };
            let mix = mixing.moments().map_err(num)?;
            let qv = mixture_qv_moments(kind, &mix, &c).map_err(num)?;
            json!({
                "task": "qv_moments",
                "mean": emit::sym_rows(&qv.mean),
                "var_vec": emit::mat_rows(&qv.var_vec),
            })
        }
    };
    write_artifact(&out, &emit::to_json(&result))?;
    Ok(json!({ "artifacts": { "subordinator_json": path_str(&out) } }))
}

/// Serialized probe: the drift whose exact semigroup is handed to the
/// extraction routine as a black box.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub drift: DriftOperator,
}

pub fn extract_op(args: &ExtractArgs) -> Result<Value, CliError> {
    let cfg: ProbeConfig = load_json(&args.config)?;
    let env_dir = env_output_dir();
    let output = OutputConfig::default();
    let out = resolve_out(args.out.as_deref(), &output, "extract_op.json", env_dir.as_deref());

    let d = cfg.drift.dim();
    // surfaces propagator failures before the closure must be infallible
    cfg.drift
        .evolve(1e-3, &SymMat::identity(d))
        .map_err(num)?;
    let semigroup = |t: f64, x: &SymMat| cfg.drift.evolve(t, x).expect("propagator evaluation");
    let recovered = extract_generator(&semigroup, d).map_err(num)?;
    let reference: &DMatrix<f64> = cfg.drift.a();
    let error = (recovered.a() - reference).norm();

    let result = json!({
        "a_hat": emit::mat_rows(recovered.a()),
        "a_reference": emit::mat_rows(reference),
        "frobenius_error": error,
    });
    write_artifact(&out, &emit::to_json(&result))?;
    Ok(json!({ "artifacts": { "extract_op_json": path_str(&out) }, "frobenius_error": error }))
}

pub fn validate(args: &ValidateArgs) -> Result<Value, CliError> {
    let report = run_suite(&args.suite)?;
    let env_dir = env_output_dir();
    let output = OutputConfig::default();
    let default_name = format!("validate_{}.json", args.suite);
    let out = resolve_out(args.out.as_deref(), &output, &default_name, env_dir.as_deref());
    let value = report.to_value();
    write_artifact(&out, &emit::to_json(&value))?;
    if report.pass {
        Ok(value)
    } else {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name)
            .collect();
        Err(CliError::Validation(format!(
            "suite {} failed: {} (report at {})",
            args.suite,
            failed.join(", "),
            out.display()
        )))
    }
}
