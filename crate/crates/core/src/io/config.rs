//! TOML run configuration shared by every command.
//!
//! ```toml
//! seed = 1
//! output = "out"
//!
//! [grid]
//! bounds = [[-4.0, 4.0], [-4.0, 4.0]]
//! dims = [16, 16]
//!
//! [model]
//! variant = "SBNN-IL"
//! hidden = [40, 40, 40]
//! centroids = [8, 8]
//! tau = 1.0
//!
//! [target]
//! kind = "stationary-sqexp-gp"
//! length_scale = 1.0
//!
//! [calibration]
//! outer_steps = 800
//!
//! [inference]
//! dataset = "obs.csv"
//! noise_var = 0.001
//!
//! [inference.sampler]
//! iterations = 20000
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::CalibConfig;
use crate::inference::{SghmcConfig, Transform};
use crate::math::Grid;
use crate::model::{Architecture, Embedding, Variant};
use crate::target::TargetSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// `[lo, hi]` per axis.
    pub bounds: Vec<[f64; 2]>,
    pub dims: Vec<usize>,
}

fn default_tau() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    /// Centroids per axis for SBNN variants, on the grid's bounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroids: Option<Vec<usize>>,
    #[serde(default = "default_tau")]
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    pub dataset: PathBuf,
    pub noise_var: f64,
    #[serde(default)]
    pub transform: Transform,
    #[serde(default)]
    pub sampler: SghmcConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; overrides the section seeds when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub target: TargetSpec,
    #[serde(default)]
    pub calibration: CalibConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference: Option<InferenceConfig>,
}

fn config_error(msg: impl std::fmt::Display) -> Error {
    Error::invalid(format!("config: {msg}"))
}

impl RunConfig {
    /// Parses and validates.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(config_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = super::read(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|_| config_error("not valid UTF-8"))?;
        Self::from_toml_str(text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(config_error)
    }

    pub fn grid(&self) -> Result<Grid<f64>> {
        let bounds: Vec<(f64, f64)> = self.grid.bounds.iter().map(|b| (b[0], b[1])).collect();
        Grid::new(&bounds, &self.grid.dims).map_err(config_error)
    }

    pub fn architecture(&self) -> Result<Architecture<f64>> {
        let grid = self.grid()?;
        let m = &self.model;
        let arch = if m.variant.is_spatial() {
            let counts = m
                .centroids
                .as_ref()
                .ok_or_else(|| config_error(format!("{} needs `model.centroids`", m.variant)))?;
            let bounds: Vec<(f64, f64)> = grid.bounds().to_vec();
            let centroids = Grid::new(&bounds, counts).map_err(config_error)?;
            Architecture::sbnn(m.variant, Embedding::new(centroids, m.tau)?, &m.hidden)
        } else {
            if m.centroids.is_some() {
                return Err(config_error(format!("{} takes no centroids", m.variant)));
            }
            Architecture::bnn(m.variant, grid.dim(), &m.hidden)
        };
        arch.map_err(config_error)
    }

    /// `cli` beats the master seed, which beats `section`.
    pub fn resolve_seed(&self, cli: Option<u64>, section: u64) -> u64 {
        cli.or(self.seed).unwrap_or(section)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        self.architecture()?;
        self.target.validate(&grid).map_err(config_error)?;
        self.calibration.validate().map_err(config_error)?;
        if let Some(inf) = &self.inference {
            if !(inf.noise_var > 0.0 && inf.noise_var.is_finite()) {
                return Err(config_error("inference.noise_var must be positive"));
            }
        }
        Ok(())
    }
}
