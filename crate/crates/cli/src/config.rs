use std::path::Path;

use fgrlab::coefficients::SourceConvention;
use fgrlab::dynamics::DecayExperiment;
use fgrlab::fgr::PointSpec;
use fgrlab::verify::Tolerances;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialConfig {
    pub depth: f64,
    pub h: f64,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        PotentialConfig { depth: 1.0, h: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearityConfig {
    /// `cubic` or `power:<p>`.
    pub name: String,
}

impl Default for NonlinearityConfig {
    fn default() -> Self {
        NonlinearityConfig { name: "cubic".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub half_width: f64,
    pub n_points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { half_width: 20.0, n_points: 2001 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    /// Sign of the nonlinear source in the remainder equation.
    pub convention: SourceConvention,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub lambdas: Vec<f64>,
    pub hs: Vec<f64>,
    pub plot: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig { lambdas: vec![2.0], hs: vec![0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6], plot: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub potential: PotentialConfig,
    pub nonlinearity: NonlinearityConfig,
    pub lambda: f64,
    pub grid: GridConfig,
    pub chain: ChainConfig,
    pub scan: ScanConfig,
    /// The decay experiment. Its base point is taken from `lambda` and `potential`.
    pub evolve: DecayExperiment,
    pub tolerances: Tolerances,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            potential: PotentialConfig::default(),
            nonlinearity: NonlinearityConfig::default(),
            lambda: 2.0,
            grid: GridConfig::default(),
            chain: ChainConfig::default(),
            scan: ScanConfig::default(),
            evolve: DecayExperiment::default(),
            tolerances: Tolerances::default(),
        }
    }
}

impl RunConfig {
    /// JSON for `.json` files, TOML otherwise.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg: RunConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    /// Propagates the shared keys into the sections that repeat them.
    pub fn resolve(mut self) -> Self {
        self.evolve.base_lambda = self.lambda;
        self.evolve.base_depth = self.potential.depth;
        self.evolve.base_h = self.potential.h;
        self.evolve.convention = self.chain.convention;
        self
    }

    pub fn point(&self) -> PointSpec {
        PointSpec {
            lambda: self.lambda,
            depth: self.potential.depth,
            h: self.potential.h,
            half_width: self.grid.half_width,
            n_points: self.grid.n_points,
            convention: self.chain.convention,
        }
    }
}
