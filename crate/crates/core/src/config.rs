//! TOML run configuration.
//!
//! Environment variables may override paths and parallelism only:
//! `QFBART_DATA`, `QFBART_OUTPUT` and `QFBART_THREADS`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{NamedModel, OosSettings, PointSummary, WeightScheme, QS_GRID};
use crate::gibbs::{ModelSpec, OmegaMode, DEFAULT_QUANTILES};
use crate::panel::{CovariateKind, CovariateSpec, PanelSchema, Quarter};
use crate::scenario::{GirfOptions, PeriodGroup};
use crate::shrinkage::PriorKind;
use crate::synthetic::SyntheticDgpSpec;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SyntheticDgpSpec>,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub forecast: ForecastConfig,
    #[serde(default)]
    pub girf: GirfConfig,
}

fn default_threads() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub panel: PathBuf,
    #[serde(default)]
    pub schema: PanelSchema,
    #[serde(default = "default_us")]
    pub us_country: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_holdout: Option<Quarter>,
}

fn default_us() -> String {
    "US".into()
}

/// Settings shared by every model unless the model overrides them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub quantiles: Vec<f64>,
    pub horizon: usize,
    pub num_trees: usize,
    pub prior: PriorKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leaf_scale: Option<f64>,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            sweeps: 30_000,
            burn_in: 15_000,
            thin: 5,
            quantiles: DEFAULT_QUANTILES.to_vec(),
            horizon: 1,
            num_trees: 250,
            prior: PriorKind::PooledHorseshoe,
            leaf_scale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub covariates: CovariateKind,
    pub omega: OmegaMode,
    pub factor: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_trees: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thin: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub horizons: Vec<usize>,
    pub point: PointSummary,
    pub qs_grid: Vec<f64>,
    pub schemes: Vec<WeightScheme>,
    /// Schemes that get a ratio heatmap.
    pub heatmaps: Vec<WeightScheme>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_origins: Option<usize>,
    /// Defaults to the first model with CISS covariates, no trees and no factor.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<String>,
    /// Sweeps per origin in the recursive exercise; the model's own when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweeps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            horizons: vec![1, 4],
            point: PointSummary::Mean,
            qs_grid: QS_GRID.to_vec(),
            schemes: WeightScheme::ALL.to_vec(),
            heatmaps: WeightScheme::ALL.to_vec(),
            max_origins: None,
            benchmark: None,
            sweeps: None,
            burn_in: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GirfConfig {
    /// Defaults to the first model with a factor.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub factor: bool,
    pub factor_shock: f64,
    pub horizons: usize,
    pub fci: bool,
    pub fci_sizes: Vec<f64>,
    pub fci_horizons: usize,
    pub origin_stride: usize,
    pub periods: Vec<PeriodGroup>,
}

impl Default for GirfConfig {
    fn default() -> Self {
        GirfConfig {
            model: None,
            factor: true,
            factor_shock: 1.0,
            horizons: 8,
            fci: true,
            fci_sizes: vec![-3.0, -2.0, -1.0, 1.0, 2.0, 3.0],
            fci_horizons: 4,
            origin_stride: 1,
            periods: PeriodGroup::defaults(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    /// Reads `path` and applies the environment overrides.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_toml(&text)?;
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(p) = get("QFBART_DATA") {
            self.data.panel = PathBuf::from(p);
        }
        if let Some(p) = get("QFBART_OUTPUT") {
            self.output_dir = PathBuf::from(p);
        }
        if let Some(t) = get("QFBART_THREADS") {
            self.threads = t
                .parse()
                .map_err(|_| Error::Config(format!("QFBART_THREADS={t} is not a count")))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        for (k, m) in self.models.iter().enumerate() {
            if self.models[..k].iter().any(|o| o.name == m.name) {
                return Err(Error::Config(format!("duplicate model name `{}`", m.name)));
            }
            if m.name.is_empty() || m.name.contains(['/', '\\']) {
                return Err(Error::Config(format!("invalid model name `{}`", m.name)));
            }
            self.model_spec(m).validate()?;
        }
        if let Some(s) = &self.simulate {
            s.validate()?;
        }
        Ok(())
    }

    pub fn model(&self, name: &str) -> Result<&ModelConfig> {
        self.models
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::Config(format!("no model named `{name}`")))
    }

    pub fn model_spec(&self, m: &ModelConfig) -> ModelSpec {
        let e = &self.estimation;
        let mut spec = ModelSpec {
            covariates: CovariateSpec::new(m.covariates, e.horizon),
            prior: m.prior.unwrap_or(e.prior),
            omega_mode: m.omega,
            factor_on: m.factor,
            quantiles: e.quantiles.clone(),
            sweeps: m.sweeps.unwrap_or(e.sweeps),
            burn_in: m.burn_in.unwrap_or(e.burn_in),
            thin: m.thin.unwrap_or(e.thin),
            ..ModelSpec::default()
        };
        spec.hyper.tree.num_trees = m.num_trees.unwrap_or(e.num_trees);
        spec.hyper.leaf_scale = e.leaf_scale;
        spec
    }

    pub fn named_models(&self) -> Vec<NamedModel> {
        self.models
            .iter()
            .map(|m| NamedModel {
                name: m.name.clone(),
                spec: self.model_spec(m),
            })
            .collect()
    }

    pub fn benchmark_name(&self) -> Result<String> {
        if let Some(b) = &self.forecast.benchmark {
            self.model(b)?;
            return Ok(b.clone());
        }
        self.named_models()
            .into_iter()
            .find(|m| m.spec.is_benchmark())
            .map(|m| m.name)
            .ok_or_else(|| Error::contract("no benchmark model (CISS covariates, omega 0, no factor)"))
    }

    /// Models and settings for the recursive exercise.
    pub fn oos(&self) -> Result<(Vec<NamedModel>, OosSettings)> {
        let f = &self.forecast;
        let mut models = self.named_models();
        for m in &mut models {
            if let Some(s) = f.sweeps {
                m.spec.sweeps = s;
            }
            if let Some(b) = f.burn_in {
                m.spec.burn_in = b;
            }
            m.spec.validate()?;
        }
        let settings = OosSettings {
            horizons: f.horizons.clone(),
            seed: self.seed,
            max_origins: f.max_origins,
            point: f.point,
            qs_grid: f.qs_grid.clone(),
            schemes: f.schemes.clone(),
            benchmark: self.benchmark_name()?,
        };
        Ok((models, settings))
    }

    pub fn girf_model(&self) -> Result<&ModelConfig> {
        match &self.girf.model {
            Some(name) => self.model(name),
            None => self
                .models
                .iter()
                .find(|m| m.factor)
                .ok_or_else(|| Error::contract("no model with a factor for GIRFs")),
        }
    }

    pub fn girf_options(&self, horizons: usize) -> GirfOptions {
        GirfOptions {
            horizons,
            seed: self.seed,
            origin_stride: self.girf.origin_stride,
        }
    }

    pub fn store_dir(&self, model: &str) -> PathBuf {
        self.output_dir.join("stores").join(model)
    }
}
