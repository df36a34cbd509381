//! Strict JSON experiment configs. Unknown fields are rejected everywhere.

use std::fs;
use std::path::{Path, PathBuf};

use flowforge_core::BuildConfig;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::suites::Suite;
use crate::{Common, ConfigError};

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// `{ "seed", "out_dir", "threads", "build": { .. } }`
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildExperiment {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub threads: usize,
    pub build: BuildConfig,
}

/// `{ "seed", "out_dir", "threads", "verify": { "suite": .., <suite parameters> } }`
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyExperiment {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub threads: usize,
    pub verify: Suite,
}

/// Source law the network was built for.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceLaw {
    pub sigma_x: Vec<Vec<f64>>,
    #[serde(default)]
    pub mu_x: Option<Vec<f64>>,
}

fn default_directions() -> usize {
    64
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleOptions {
    /// Defaults to `<out_dir>/network.json`.
    #[serde(default)]
    pub network: Option<PathBuf>,
    pub source: SourceLaw,
    pub n_samples: usize,
    #[serde(default = "default_directions")]
    pub n_directions: usize,
}

/// `{ "seed", "out_dir", "threads", "sample": { .. } }`
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleExperiment {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub threads: usize,
    pub sample: SampleOptions,
}

/// Read and parse a config; every failure here maps to exit code 2.
pub fn load<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
    let parsed = serde_json::from_str(&text)
        .map_err(|e| ConfigError(format!("invalid config {}: {e}", path.display())))?;
    Ok(parsed)
}

/// Command-line flags win over config values.
pub struct Resolved {
    pub out_dir: PathBuf,
    pub threads: usize,
}

pub fn resolve(flags: &Common, out_dir: PathBuf, threads: usize) -> anyhow::Result<Resolved> {
    let resolved = Resolved {
        out_dir: flags.out.clone().unwrap_or(out_dir),
        threads: flags.threads.unwrap_or(threads),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(resolved.threads)
        .build_global()
        .map_err(|e| ConfigError(format!("cannot start {} worker threads: {e}", resolved.threads)))?;
    fs::create_dir_all(&resolved.out_dir)
        .map_err(|e| ConfigError(format!("cannot create {}: {e}", resolved.out_dir.display())))?;
    Ok(resolved)
}
