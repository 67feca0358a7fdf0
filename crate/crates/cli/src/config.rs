use std::fs;
use std::path::{Path, PathBuf};

use sbmc_core::limits::LimitConfig;
use sbmc_core::replaw::{ReproductionLaw, SolverConfig};
use sbmc_core::tree::DEFAULT_NODE_CAP;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything a run depends on. Embedded in every output file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub law: ReproductionLaw,
    pub alpha: f64,
    pub root_size: f64,
    pub seed: u64,
    pub replicas: usize,
    pub times: Vec<f64>,
    pub generations: Vec<usize>,
    pub solver_tol: f64,
    pub tail_tol: f64,
    pub bias_fraction: f64,
    pub node_cap: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            law: ReproductionLaw::UniformBinary,
            alpha: 1.0,
            root_size: 1.0,
            seed: 42,
            replicas: 10_000,
            times: vec![1.0],
            generations: vec![5],
            solver_tol: SolverConfig::default().tol,
            tail_tol: 1e-6,
            bias_fraction: 0.05,
            node_cap: DEFAULT_NODE_CAP,
            out_dir: PathBuf::from("sbmc-out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if !(self.root_size.is_finite() && self.root_size > 0.0) {
            return bad(format!("root_size must be positive, got {}", self.root_size));
        }
        if self.replicas == 0 {
            return bad("replicas must be >= 1".into());
        }
        for (name, v) in [
            ("solver_tol", self.solver_tol),
            ("tail_tol", self.tail_tol),
            ("bias_fraction", self.bias_fraction),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        if self.tail_tol >= 1.0 {
            return bad(format!("tail_tol must be < 1, got {}", self.tail_tol));
        }
        if self.node_cap == 0 {
            return bad("node_cap must be >= 1".into());
        }
        if let Some(t) = self.times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return bad(format!("times must be finite and >= 0, got {t}"));
        }
        Ok(())
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            tol: self.solver_tol,
            ..SolverConfig::default()
        }
    }

    pub fn limits(&self) -> LimitConfig {
        LimitConfig {
            solver: self.solver(),
            tail_tol: self.tail_tol,
            bias_fraction: self.bias_fraction,
            node_cap: self.node_cap,
            ..LimitConfig::default()
        }
    }
}
