//! Run configuration: TOML file sections, overridden by command-line flags,
//! echoed fully resolved into every output directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fkbridge::potentials::PotentialConfig;
use fkbridge::PotentialSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    pub solver: SolverConfig,
    pub kernel: KernelConfig,
    pub mc: McSection,
    pub simulate: SimulateConfig,
    pub moments: MomentsConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    /// Reference case name; mutually exclusive with `rho0`/`rho_t`.
    pub case: Option<String>,
    pub rho0: Option<PathBuf>,
    pub rho_t: Option<PathBuf>,
    /// Potential for custom problems and the `kernel` command.
    pub potential: Option<String>,
    pub gamma: f64,
    pub alpha: f64,
    pub t0: f64,
    pub t1: f64,
    /// Number of recorded time slices including both ends.
    pub slices: usize,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self { case: None, rho0: None, rho_t: None, potential: None, gamma: 1.0, alpha: 1.0, t0: 0.0, t1: 1.0, slices: 11 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { x_min: -8.0, x_max: 8.0, nx: 401 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// `pde` or `analytic`.
    pub kernel_method: String,
    pub steps_per_unit: usize,
    pub pad: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 5000, kernel_method: "pde".into(), steps_per_unit: 400, pad: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    /// `pde`, `analytic` or `mc`.
    pub method: String,
    pub s: f64,
    pub tau: f64,
    /// Start and end points of the `mc` point estimate.
    pub y: f64,
    pub x: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { method: "pde".into(), s: 0.0, tau: 0.5, y: 0.0, x: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub paths: usize,
    pub substeps: usize,
    pub seed: u64,
    /// `forward` or `pinned_bridge`.
    pub scheme: String,
}

impl Default for McSection {
    fn default() -> Self {
        Self { paths: 100_000, substeps: 64, seed: 42, scheme: "forward".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Output directory of a previous `solve` (one component).
    pub from_run: Option<PathBuf>,
    pub paths: usize,
    pub dt: f64,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { from_run: None, paths: 100_000, dt: 1e-3, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsConfig {
    pub x0: f64,
    pub s: f64,
    pub epsilon: f64,
    pub increments: Vec<f64>,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        Self { x0: 1.0, s: 0.0, epsilon: 0.5, increments: vec![0.01, 0.005, 0.0025] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Cross-field checks shared by every command.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if !(g.x_max > g.x_min) || g.nx < 3 {
            bail!("grid needs x_max > x_min and nx >= 3 (got [{}, {}], nx = {})", g.x_min, g.x_max, g.nx);
        }
        if !(self.solver.tol > 0.0) {
            bail!("solver.tol must be positive, got {}", self.solver.tol);
        }
        if !(self.problem.t1 > self.problem.t0) {
            bail!("need t1 > t0, got [{}, {}]", self.problem.t0, self.problem.t1);
        }
        if self.problem.slices < 2 {
            bail!("problem.slices must be >= 2");
        }
        for p in [&self.problem.rho0, &self.problem.rho_t, &self.simulate.from_run].into_iter().flatten() {
            if !p.exists() {
                bail!("referenced path {} does not exist", p.display());
            }
        }
        Ok(())
    }
}

/// Potential by name; `gamma` and `alpha` parameterize the centrifugal and
/// moving-node potentials.
pub fn build_potential(name: &str, gamma: f64, alpha: f64) -> Result<PotentialSpec<f64>> {
    let cfg = match name.trim().to_ascii_lowercase().as_str() {
        "free" => PotentialConfig::Free,
        "harmonic" => PotentialConfig::Harmonic,
        "gaussian" | "gaussian_case" | "gaussian_spread" => PotentialConfig::GaussianCase,
        "nodal" | "nodal_case" | "stable_node" => PotentialConfig::NodalCase,
        "centrifugal" => PotentialConfig::Centrifugal { gamma, energy: None },
        "moving_node" => PotentialConfig::MovingNode { alpha },
        other => bail!("unknown potential {other:?} (free, harmonic, gaussian, nodal, centrifugal, moving_node)"),
    };
    Ok(cfg.build()?)
}
