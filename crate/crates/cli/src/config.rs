//! JSON experiment configuration and output-path resolution.

use std::path::{Path, PathBuf};

use psou::oup::OuProcessSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable that redirects relative artifact paths.
pub const OUTPUT_DIR_ENV: &str = "PSOU_OUTPUT_DIR";

/// A complete experiment: the process, run parameters, and output
/// defaults. Deserialization rejects unknown keys and any dimension
/// mismatch between drift, driver and start state, so a bad configuration
/// never reaches the numerics.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: OuProcessSpec,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Simulation horizon; required by `simulate`.
    pub horizon: Option<f64>,
    /// Number of stationary draws; required by `sample-stationary`.
    pub n_samples: Option<usize>,
    /// Master seed. The `--seed` flag overrides it.
    pub seed: u64,
    /// Autocovariance lags reported by `moments` and `sample-stationary`.
    pub lags: Vec<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory receiving artifacts whose paths are relative; the
    /// `PSOU_OUTPUT_DIR` environment variable takes precedence.
    pub dir: Option<PathBuf>,
    /// Filename prefix for artifacts not pinned by a flag.
    pub stem: Option<String>,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Picks the artifact location. The name comes from `explicit`, else
/// `<stem>.<default_name>`, else `default_name`; a relative result is then
/// rooted at `env_dir` (the `PSOU_OUTPUT_DIR` override), else
/// `output.dir`, else left relative to the working directory.
pub fn resolve_out(
    explicit: Option<&Path>,
    output: &OutputConfig,
    default_name: &str,
    env_dir: Option<&Path>,
) -> PathBuf {
    let named: PathBuf = match explicit {
        Some(p) => p.to_path_buf(),
        None => match &output.stem {
            Some(stem) => PathBuf::from(format!("{stem}.{default_name}")),
            None => PathBuf::from(default_name),
        },
    };
    if named.is_absolute() {
        return named;
    }
    match env_dir.or(output.dir.as_deref()) {
        Some(dir) => dir.join(named),
        None => named,
    }
}

/// The directory override currently in force.
pub fn env_output_dir() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from)
}

/// Companion artifact named after a primary one: `out/path.csv` with
/// suffix `jumps.csv` becomes `out/path.jumps.csv`.
pub fn companion(primary: &Path, suffix: &str) -> PathBuf {
    let stem = primary
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    primary.with_file_name(format!("{stem}.{suffix}"))
}
