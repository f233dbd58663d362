//! Experiment configuration: TOML parsing, validation, and hashing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use striprw_core::EnvironmentLaw;

fn default_tail_tol() -> f64 {
    1e-8
}
fn default_tail_eps() -> f64 {
    1e-6
}
fn default_alpha_grid() -> Vec<f64> {
    vec![0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_workers() -> usize {
    1
}

/// Full description of one experiment. The TOML file mirrors this struct;
/// `law` uses the same tagged layout as the library's JSON serialization.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub law: EnvironmentLaw,
    /// box horizon N: walks run until the first entry of layer N
    #[serde(alias = "N")]
    pub n: i64,
    /// trap threshold multiplier: massive means w >= delta * N^(1/s)
    pub delta: f64,
    /// number of (environment, walk) replica pairs
    pub replicas: usize,
    pub seed: u64,
    /// absolute tolerance for occupation-series truncation
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
    /// return-probability budget for the simulation cutoff
    #[serde(default = "default_tail_eps")]
    pub tail_eps: f64,
    /// grid for the moment-Lyapunov curve r(alpha)
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("cannot parse {}: {e}", path.display()))
    }

    /// All violated invariants, empty when the config is usable.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n < 10 {
            out.push(format!("n = {} violates n >= 10", self.n));
        }
        if self.replicas < 1 {
            out.push("replicas must be >= 1".into());
        }
        if !(self.delta > 0.0) {
            out.push(format!("delta = {} violates delta > 0", self.delta));
        }
        for (name, v) in [("tail_tol", self.tail_tol), ("tail_eps", self.tail_eps)] {
            if !(v > 0.0 && v < 1.0) {
                out.push(format!("{name} = {v} outside (0, 1)"));
            }
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|a| !a.is_finite()) {
            out.push("alpha_grid must be a non-empty list of finite reals".into());
        }
        if self.workers < 1 {
            out.push("workers must be >= 1".into());
        }
        if let Err(e) = self.law.validate() {
            out.push(format!("law: {e}"));
        }
        out
    }

    /// SHA-256 of the canonical JSON form; worker count and output path are
    /// excluded so runs that differ only in execution layout hash the same.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.workers = 1;
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
