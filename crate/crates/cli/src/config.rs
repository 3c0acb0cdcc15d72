//! Run configuration (schema version 1).

use std::fs;
use std::path::{Path, PathBuf};

use lindblad_diffusion::fiber_dynamics::{DeltaFibers, FiberFamily, RankOneFibers};
use lindblad_diffusion::model::{model_from_json, ModelDocument, ModelSpec};
use lindblad_diffusion::montecarlo::HorizonPolicy;
use lindblad_diffusion::torus::{make_grid, RankOneTerm, TorusGrid};
use serde::Deserialize;
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn fail<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Inline model document or path to one (relative to the config file).
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Path(String),
    Inline(ModelDocument),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitConfig {
    /// `|δ₀⟩⟨δ₀|`.
    #[default]
    Delta,
    /// A finite-rank state `Σ λ |f⟩⟨g|`.
    Terms(Vec<RankOneTerm>),
}

fn init_from_value<'de, D: serde::Deserializer<'de>>(d: D) -> Result<InitConfig, D::Error> {
    let v = Value::deserialize(d)?;
    match &v {
        Value::String(s) if s == "delta" => Ok(InitConfig::Delta),
        Value::Object(_) => serde_json::from_value(v).map_err(serde::de::Error::custom),
        _ => Err(serde::de::Error::custom("init must be \"delta\" or {\"terms\": [...]}")),
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveConfig {
    pub times: Vec<f64>,
    pub gammas: Vec<f64>,
    pub eps: f64,
    #[serde(deserialize_with = "init_from_value")]
    pub init: InitConfig,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            times: vec![25.0, 100.0, 400.0],
            gammas: vec![0.25, 0.5, 1.0, 2.0],
            eps: 0.01,
            init: InitConfig::Delta,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub radius: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { radius: 0.05 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub n_traj: usize,
    pub t_max: f64,
    pub seed: u64,
    pub horizon_policy: HorizonPolicy,
    /// Observation time of the classical particle sampler.
    pub particle_t: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n_traj: 10_000,
            t_max: 20.0,
            seed: 0,
            horizon_policy: HorizonPolicy::Enforce,
            particle_t: 200.0,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    /// Fiber momentum; the zero fiber when absent.
    pub p: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrosscheckConfig {
    /// Relative tolerance between deterministic σ routes.
    pub sigma_rel_tol: f64,
    /// Monte Carlo agreement in standard errors.
    pub mc_sigmas: f64,
    pub run_mc: bool,
}

impl Default for CrosscheckConfig {
    fn default() -> Self {
        CrosscheckConfig {
            sigma_rel_tol: 1e-4,
            mc_sigmas: 3.0,
            run_mc: true,
        }
    }
}

fn default_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub schema_version: u32,
    pub model: ModelRef,
    pub grid: GridConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub evolve: EvolveConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub crosscheck: CrosscheckConfig,
}

/// A parsed config with its resolved model and the raw bytes it came from.
pub struct LoadedConfig {
    pub config: RunConfig,
    pub raw: Vec<u8>,
    pub path: PathBuf,
    pub model_doc: Value,
    pub model: ModelSpec,
    pub grid: TorusGrid,
}

fn read(path: &Path) -> Result<Vec<u8>, ConfigError> {
    fs::read(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let raw = read(path)?;
    let config: RunConfig =
        serde_json::from_slice(&raw).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    if config.schema_version != SCHEMA_VERSION {
        return fail(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            config.schema_version
        ));
    }
    let model_doc: Value = match &config.model {
        ModelRef::Inline(doc) => serde_json::to_value(doc).expect("model document serializes"),
        ModelRef::Path(p) => {
            let full = path.parent().unwrap_or(Path::new(".")).join(p);
            serde_json::from_slice(&read(&full)?)
                .map_err(|e| ConfigError(format!("{}: {e}", full.display())))?
        }
    };
    let model = model_from_json(&model_doc).map_err(|e| ConfigError(e.to_string()))?;
    let grid = make_grid(config.grid.d, config.grid.n).map_err(|e| ConfigError(e.to_string()))?;
    if model.dim != grid.dim() {
        return fail(format!("grid has d = {} but the model has dimension {}", grid.dim(), model.dim));
    }
    check_ranges(&config)?;
    Ok(LoadedConfig {
        config,
        raw,
        path: path.to_path_buf(),
        model_doc,
        model,
        grid,
    })
}

fn check_ranges(c: &RunConfig) -> Result<(), ConfigError> {
    let e = &c.evolve;
    if e.times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return fail("evolve.times must be finite and nonnegative");
    }
    if !(1e-4..=1e-1).contains(&e.eps) {
        return fail("evolve.eps must lie in [1e-4, 1e-1]");
    }
    if !(c.fit.radius > 0.0 && c.fit.radius <= 0.2) {
        return fail("fit.radius must lie in (0, 0.2]");
    }
    if c.mc.n_traj < 2 || !(c.mc.t_max > 0.0) || !(c.mc.particle_t > 0.0) {
        return fail("mc needs n_traj >= 2 and positive horizons");
    }
    if let Some(p) = &c.spectrum.p {
        if p.len() != c.grid.d {
            return fail("spectrum.p must have d components");
        }
    }
    Ok(())
}

impl LoadedConfig {
    pub fn init(&self) -> Result<Box<dyn FiberFamily>, ConfigError> {
        Ok(match &self.config.evolve.init {
            InitConfig::Delta => Box::new(DeltaFibers),
            InitConfig::Terms(t) => Box::new(RankOneFibers::new(t.clone()).map_err(|e| ConfigError(e.to_string()))?),
        })
    }
}
