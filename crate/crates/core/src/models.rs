//! The forecasting roster and a uniform "train on history, predict one day" entry point.

use std::fmt;
use std::str::FromStr;

use chrono::Duration;
use serde::{Deserialize, Serialize};

use crate::baselines::persistence::{naive_persistence, smart_persistence, PowerSample};
use crate::baselines::regression::{forecast_regressor, train_regressor, training_pairs, Hyperparams, RegressorFamily, RegressorModel};
use crate::error::{Error, Result};
use crate::fit::{fit_window, predict_power, predict_power_with_params, prepare_window, FitOptions, FitWindowResult};
use crate::forecast::{ForecastSeries, WeatherPoint};
use crate::preprocess::{PreprocessConfig, TelemetryRecord};
use crate::sdm::{ArrayTopology, SdmParamsRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Pvpro,
    SmartPersistence,
    NaivePersistence,
    Nominal,
    Lr,
    Kr,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] =
        [ModelKind::Pvpro, ModelKind::SmartPersistence, ModelKind::NaivePersistence, ModelKind::Nominal, ModelKind::Lr, ModelKind::Kr];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Pvpro => "pvpro",
            ModelKind::SmartPersistence => "smart_persistence",
            ModelKind::NaivePersistence => "naive_persistence",
            ModelKind::Nominal => "nominal",
            ModelKind::Lr => "lr",
            ModelKind::Kr => "kr",
        }
    }

    pub fn family(&self) -> Option<RegressorFamily> {
        match self {
            ModelKind::Lr => Some(RegressorFamily::Linear),
            ModelKind::Kr => Some(RegressorFamily::KernelRidge),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown model '{s}'")))
    }
}

/// Everything a roster model may need besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelContext {
    pub topology: ArrayTopology,
    /// Datasheet parameters; required by the nominal model.
    pub nominal: Option<SdmParamsRef>,
    /// Starting point for the first physical fit.
    pub init: SdmParamsRef,
    pub fit_options: FitOptions,
    pub preprocess: PreprocessConfig,
    pub horizon: Duration,
    pub lr: Hyperparams,
    pub kr: Hyperparams,
}

impl ModelContext {
    pub fn g_min(&self) -> f64 {
        self.preprocess.g_min
    }

    pub fn hyperparams(&self, family: RegressorFamily) -> Hyperparams {
        match family {
            RegressorFamily::Linear => self.lr,
            RegressorFamily::KernelRidge => self.kr,
        }
    }
}

/// A forecast plus whatever was trained to make it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub forecast: ForecastSeries,
    pub fit: Option<FitWindowResult>,
    pub regressor: Option<RegressorModel>,
}

impl Prediction {
    fn plain(forecast: ForecastSeries) -> Self {
        Self { forecast, fit: None, regressor: None }
    }
}

/// Trains `kind` on `training` and predicts power for `weather`.
///
/// `training` must hold only data the model is allowed to see. For the
/// physical fit it is the fitting window itself; `warm` overrides the
/// context's starting point.
pub fn train_and_predict(
    kind: ModelKind,
    ctx: &ModelContext,
    training: &[TelemetryRecord],
    weather: &[WeatherPoint],
    warm: Option<&SdmParamsRef>,
) -> Result<Prediction> {
    match kind {
        ModelKind::Pvpro => {
            let window = prepare_window(training, &ctx.preprocess)?;
            let start = warm.unwrap_or(&ctx.init);
            let fit = fit_window(&window, &ctx.topology, start, &ctx.fit_options)?;
            let forecast = predict_power(&fit, weather, &ctx.topology, ctx.g_min())?;
            Ok(Prediction { forecast, fit: Some(fit), regressor: None })
        }
        ModelKind::Nominal => {
            let params = ctx
                .nominal
                .as_ref()
                .ok_or_else(|| Error::Config("nominal model needs a datasheet".into()))?;
            Ok(Prediction::plain(predict_power_with_params(params, weather, &ctx.topology, ctx.g_min(), "nominal")?))
        }
        ModelKind::Lr | ModelKind::Kr => {
            let family = kind.family().expect("regressor kind");
            let (x, y) = training_pairs(training, ctx.g_min());
            let model = train_regressor(family, &x, &y, ctx.hyperparams(family))?;
            let forecast = forecast_regressor(&model, weather);
            Ok(Prediction { forecast, fit: None, regressor: Some(model) })
        }
        ModelKind::SmartPersistence => {
            let hist: Vec<PowerSample> = training.iter().map(PowerSample::from).collect();
            Ok(Prediction::plain(smart_persistence(&hist, weather, ctx.horizon, ctx.g_min())?))
        }
        ModelKind::NaivePersistence => {
            let hist: Vec<PowerSample> = training.iter().map(PowerSample::from).collect();
            let targets: Vec<_> = weather.iter().map(|w| w.timestamp).collect();
            Ok(Prediction::plain(naive_persistence(&hist, &targets, ctx.horizon)?))
        }
    }
}
