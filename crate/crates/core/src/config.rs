//! Run configuration: one TOML file describing geometry, physics, the
//! offline protocol, the online trials and the studies.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fem::{InnerProductKind, SolveMethod};
use crate::geometry::PipeGeometry;
use crate::network::TrainSettings;
use crate::problem::{MeshSpec, Physics, PipeProblem};
use crate::rom::{linspace, OfflineSettings};
use crate::schwarz::{InitRule, SchwarzOptions};

pub const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryBlock {
    pub width: f64,
    pub length: f64,
    pub cuts: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterBlock {
    /// Training interval `[lo, hi]`.
    pub range: [f64; 2],
    pub train_count: usize,
    pub tilde_count: usize,
    /// Enrichment grid counts per input interface (2in, 2out), per mode.
    pub grid_counts: Vec<Vec<usize>>,
    pub sigma: f64,
    pub inner_product: InnerProductKind,
    pub offline_tol: f64,
    #[serde(default)]
    pub offline_init: InitRule,
    #[serde(default = "yes")]
    pub enrichment: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineBlock {
    pub tol: f64,
    pub max_sweeps: usize,
    #[serde(default)]
    pub init: InitRule,
    pub trial: Vec<f64>,
    /// Relative L2 budgets on the first and third subdomains.
    pub budget: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub method: SolveMethod,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Verify1dBlock {
    pub pe: Vec<f64>,
    pub delta: Vec<f64>,
    pub max_rel_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyBlock {
    pub pe_sweep_count: usize,
    pub overlap_cuts: [f64; 4],
    pub extrapolation_range: [f64; 2],
    pub extrapolation_count: usize,
    pub perturbation_mu: Vec<f64>,
    pub perturbation_parameter: f64,
    pub perturbation_sweeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub geometry: GeometryBlock,
    pub mesh: MeshSpec,
    pub physics: Physics,
    pub parameters: ParameterBlock,
    pub network: NetworkBlock,
    pub online: OnlineBlock,
    pub solver: SolverBlock,
    pub verify1d: Verify1dBlock,
    pub studies: StudyBlock,
}

/// Training settings without the seed, which lives at the top level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkBlock {
    pub hidden: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    pub max_validation_failures: usize,
    pub mu_init: f64,
    pub mu_max: f64,
    pub restarts: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_toml(DEFAULT_CONFIG).expect("bundled default configuration parses")
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        PipeGeometry::new(self.geometry.width, self.geometry.length, self.geometry.cuts)?;
        PipeGeometry::new(self.geometry.width, self.geometry.length, self.studies.overlap_cuts)?;
        if !(self.mesh.hx > 0.0) || self.mesh.ny == 0 || self.mesh.omega2_refinement == 0 {
            return bad("mesh spacing, row count and refinement must be positive".into());
        }
        if !(self.physics.diffusion > 0.0) {
            return bad("diffusion must be positive".into());
        }
        let p = &self.parameters;
        if !(p.range[0] < p.range[1]) || p.train_count == 0 || p.tilde_count == 0 {
            return bad("parameter range must be increasing and sample counts positive".into());
        }
        if p.grid_counts.len() != 2 || p.grid_counts.iter().any(|g| g.is_empty() || g.contains(&0)) {
            return bad("grid_counts needs two nonempty lists of counts >= 1".into());
        }
        if !(p.sigma > 0.0 && p.sigma < 1.0) || !(p.offline_tol > 0.0) {
            return bad("sigma must lie in (0, 1) and offline_tol must be positive".into());
        }
        if self.network.hidden == 0 || self.network.restarts == 0 || !(0.0..1.0).contains(&self.network.validation_fraction) {
            return bad("network needs hidden >= 1, restarts >= 1 and validation_fraction in [0, 1)".into());
        }
        let o = &self.online;
        if !(o.tol > 0.0) || o.max_sweeps == 0 || o.budget.iter().any(|b| !(*b > 0.0)) {
            return bad("online tol, max_sweeps and budgets must be positive".into());
        }
        if !(self.solver.tol > 0.0) {
            return bad("solver tol must be positive".into());
        }
        let v = &self.verify1d;
        if v.pe.is_empty() || v.delta.is_empty() || v.pe.iter().chain(&v.delta).any(|x| !(*x > 0.0)) {
            return bad("verify1d needs positive Peclet and overlap lists".into());
        }
        let s = &self.studies;
        if s.pe_sweep_count == 0 || s.extrapolation_count == 0 || !(s.extrapolation_range[0] < s.extrapolation_range[1]) {
            return bad("study counts must be positive and ranges increasing".into());
        }
        if s.perturbation_mu.iter().any(|m| !(*m >= 0.0)) || s.perturbation_sweeps == 0 {
            return bad("perturbation magnitudes must be nonnegative".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; keys are sorted, so the hash
    /// ignores the order of fields in the file.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("configuration serializes");
        let text = serde_json::to_string(&value).expect("configuration serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn problem(&self) -> Result<PipeProblem> {
        self.problem_with_cuts(self.geometry.cuts)
    }

    pub fn problem_with_cuts(&self, cuts: [f64; 4]) -> Result<PipeProblem> {
        Ok(PipeProblem {
            geometry: PipeGeometry::new(self.geometry.width, self.geometry.length, cuts)?,
            physics: self.physics,
            mesh: self.mesh,
            solver: self.solver.method,
        })
    }

    pub fn train_settings(&self) -> TrainSettings {
        let n = &self.network;
        TrainSettings {
            hidden: n.hidden,
            seed: self.seed,
            max_epochs: n.max_epochs,
            validation_fraction: n.validation_fraction,
            max_validation_failures: n.max_validation_failures,
            mu_init: n.mu_init,
            mu_max: n.mu_max,
            restarts: n.restarts,
        }
    }

    pub fn d_train(&self) -> Vec<f64> {
        let p = &self.parameters;
        linspace(p.range[0], p.range[1], p.train_count)
    }

    pub fn offline_settings(&self) -> OfflineSettings {
        let p = &self.parameters;
        OfflineSettings {
            d_train: self.d_train(),
            d_tilde: linspace(p.range[0], p.range[1], p.tilde_count),
            grid_counts: p.grid_counts.clone(),
            sigma: p.sigma,
            kind: p.inner_product,
            schwarz: SchwarzOptions { init: p.offline_init, tol: p.offline_tol, ..SchwarzOptions::default() },
            enrichment: p.enrichment,
            network: self.train_settings(),
            workers: self.workers,
        }
    }

    pub fn online_options(&self) -> SchwarzOptions {
        SchwarzOptions { init: self.online.init, tol: self.online.tol, max_sweeps: self.online.max_sweeps, ..Default::default() }
    }
}
