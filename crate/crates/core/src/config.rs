//! JSON run configuration shared by every CLI command.

use std::path::{Path, PathBuf};

use chrono::Duration;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{DEFAULT_CLEAR_THRESHOLD, DEFAULT_THRESHOLDS};
use crate::baselines::datasheet::{datasheet_from_params, fit_desoto_from_datasheet, Datasheet};
use crate::baselines::grid::GridSearchSpec;
use crate::baselines::regression::Hyperparams;
use crate::error::{Error, Result};
use crate::fit::{initial_guess, FitBounds, FitOptions, RollingSchedule};
use crate::models::{ModelContext, ModelKind};
use crate::preprocess::PreprocessConfig;
use crate::sdm::{ArrayTopology, SdmParamsRef};
use crate::synth::{DegradationScenario, WeatherProfile, DEFAULT_NOISE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub system: SystemConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub models: ModelsConfig,
    #[serde(default)]
    pub studies: StudiesConfig,
    #[serde(default)]
    pub seed: u64,
}

/// Either a telemetry file or a synthetic generator description.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub telemetry: Option<PathBuf>,
    /// Column mapping for foreign CSV headers.
    pub mapping: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub true_params: SdmParamsRef,
    #[serde(default)]
    pub profile: WeatherProfile,
    #[serde(default)]
    pub scenario: DegradationScenario,
    #[serde(default = "default_noise")]
    pub noise_v: f64,
    #[serde(default = "default_noise")]
    pub noise_i: f64,
    /// Caps DC power at this value (W) to imitate inverter clipping.
    #[serde(default)]
    pub clip_limit_w: Option<f64>,
}

fn default_noise() -> f64 {
    DEFAULT_NOISE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Nameplate capacity (W). Defaults to datasheet Pmp times module count.
    #[serde(default)]
    pub p_nominal: Option<f64>,
    pub topology: ArrayTopology,
    #[serde(default)]
    pub datasheet: Option<Datasheet>,
    /// Free-form annotation carried into the report.
    #[serde(default)]
    pub climate_zone: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub window_days: u32,
    pub update_days: u32,
    pub max_iterations: usize,
    pub loss_tolerance: f64,
    pub bounds: Option<FitBounds>,
    /// Starting parameters; the datasheet extraction is used when absent.
    pub init: Option<SdmParamsRef>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { window_days: 3, update_days: 1, max_iterations: 200, loss_tolerance: 1e-10, bounds: None, init: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub roster: Vec<ModelKind>,
    pub horizon_hours: u32,
    /// Index of the first forecast day; defaults to the fitting window length.
    pub first_forecast_day: Option<usize>,
    pub grid: GridSearchSpec,
    /// Fixed settings; grid search picks them when absent.
    pub lr: Option<RegressorSettings>,
    pub kr: Option<RegressorSettings>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorSettings {
    pub hyperparams: Hyperparams,
    pub training_days: u32,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            roster: ModelKind::ALL.to_vec(),
            horizon_hours: 24,
            first_forecast_day: None,
            grid: GridSearchSpec::default(),
            lr: None,
            kr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudiesConfig {
    pub daylight_only: bool,
    pub seasonal: bool,
    pub exceedance: bool,
    pub exceedance_thresholds: Vec<f64>,
    pub weather_cases: bool,
    pub clear_threshold: f64,
    pub sweep: bool,
    pub sweep_points: usize,
    pub training_length: bool,
    pub training_lengths: Vec<u32>,
    pub training_length_eval_days: usize,
}

impl Default for StudiesConfig {
    fn default() -> Self {
        Self {
            daylight_only: true,
            seasonal: true,
            exceedance: true,
            exceedance_thresholds: DEFAULT_THRESHOLDS.to_vec(),
            weather_cases: false,
            clear_threshold: DEFAULT_CLEAR_THRESHOLD,
            sweep: true,
            sweep_points: crate::analysis::studies::SWEEP_POINTS,
            training_length: false,
            training_lengths: vec![3, 7, 14, 30, 60, 90],
            training_length_eval_days: 7,
        }
    }
}

impl RunConfig {
    /// Reads a config file; relative paths are resolved against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        resolve(&mut cfg.data.telemetry);
        resolve(&mut cfg.data.mapping);
        resolve(&mut cfg.data.output);
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.topology.validate().map_err(to_config)?;
        if self.data.telemetry.is_none() && self.data.synthetic.is_none() {
            return Err(Error::Config("data needs either 'telemetry' or 'synthetic'".into()));
        }
        if let Some(ds) = &self.system.datasheet {
            ds.validate().map_err(to_config)?;
            if ds.cells_in_series != self.system.topology.cells_in_series {
                return Err(Error::Config("datasheet and topology disagree on cells_in_series".into()));
            }
        }
        if self.system.p_nominal.is_none() && self.system.datasheet.is_none() {
            return Err(Error::Config("system needs p_nominal when no datasheet is given".into()));
        }
        if let Some(p) = self.system.p_nominal {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Config(format!("p_nominal must be positive, got {p}")));
            }
        }
        if self.models.roster.is_empty() {
            return Err(Error::Config("model roster is empty".into()));
        }
        let mut seen = self.models.roster.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.models.roster.len() {
            return Err(Error::Config("model roster lists a model twice".into()));
        }
        if self.models.roster.contains(&ModelKind::Nominal) && self.system.datasheet.is_none() {
            return Err(Error::Config("the nominal model needs module datasheet values".into()));
        }
        if self.models.roster.contains(&ModelKind::Pvpro) && self.system.datasheet.is_none() && self.fit.init.is_none() {
            return Err(Error::Config("pvpro needs a datasheet or fit.init".into()));
        }
        if self.fit.window_days == 0 || self.fit.update_days == 0 {
            return Err(Error::Config("fit window and update period must be at least one day".into()));
        }
        if self.models.horizon_hours == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.models.lr.is_none() || self.models.kr.is_none() {
            self.models.grid.validate()?;
        }
        if !(self.preprocess.g_min >= 0.0) {
            return Err(Error::Config("preprocess.g_min must be >= 0".into()));
        }
        if self.studies.exceedance_thresholds.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("exceedance thresholds must be finite".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn output_dir(&self) -> PathBuf {
        self.data.output.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn horizon(&self) -> Duration {
        Duration::hours(i64::from(self.models.horizon_hours))
    }

    pub fn schedule(&self) -> RollingSchedule {
        RollingSchedule {
            window_length: Duration::days(i64::from(self.fit.window_days)),
            update_period: Duration::days(i64::from(self.fit.update_days)),
        }
    }

    /// Datasheet parameters, extracted once.
    pub fn nominal_params(&self) -> Result<Option<SdmParamsRef>> {
        self.system.datasheet.as_ref().map(fit_desoto_from_datasheet).transpose()
    }

    pub fn p_nominal(&self) -> f64 {
        self.system.p_nominal.unwrap_or_else(|| {
            let ds = self.system.datasheet.as_ref().expect("validated: datasheet present");
            ds.p_mp() * f64::from(self.system.topology.module_count())
        })
    }

    /// Fitting options and starting point. Scales and bounds come from the
    /// datasheet, or from the STC behaviour of `fit.init` when there is none.
    pub fn fit_setup(&self) -> Result<(FitOptions, SdmParamsRef)> {
        let topo = &self.system.topology;
        let (ds, init) = match (&self.system.datasheet, &self.fit.init) {
            (Some(ds), Some(init)) => (*ds, *init),
            (Some(ds), None) => (*ds, initial_guess(ds)?),
            (None, Some(init)) => (datasheet_from_params(init, topo.cells_in_series, topo.alpha_isc)?, *init),
            (None, None) => return Err(Error::Config("no datasheet and no fit.init".into())),
        };
        let mut opts = FitOptions::from_datasheet(&ds, topo);
        opts.max_iterations = self.fit.max_iterations;
        opts.loss_tolerance = self.fit.loss_tolerance;
        if let Some(b) = self.fit.bounds {
            opts.bounds = b;
        }
        opts.validate()?;
        Ok((opts, init))
    }

    pub fn model_context(&self) -> Result<ModelContext> {
        let nominal = self.nominal_params()?;
        let (fit_options, init) = match self.fit_setup() {
            Ok(v) => v,
            // Roster without pvpro and no way to build fit options: a dummy setup is never used.
            Err(Error::Config(_)) if !self.models.roster.contains(&ModelKind::Pvpro) => {
                let p = SdmParamsRef::new(1.0, 1e-10, 0.1, 100.0, 1.0)?;
                let ds = datasheet_from_params(&p, self.system.topology.cells_in_series, 0.0)?;
                (FitOptions::from_datasheet(&ds, &self.system.topology), p)
            }
            Err(e) => return Err(e),
        };
        let pick = |s: &Option<RegressorSettings>| s.map(|s| s.hyperparams).unwrap_or_default();
        Ok(ModelContext {
            topology: self.system.topology,
            nominal,
            init,
            fit_options,
            preprocess: self.preprocess,
            horizon: self.horizon(),
            lr: pick(&self.models.lr),
            kr: pick(&self.models.kr),
        })
    }
}

fn to_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}
