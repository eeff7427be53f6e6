//! Ridge and RBF kernel ridge regressors over (irradiance, module temperature, hour of day).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{hod, ForecastPoint, ForecastSeries, WeatherPoint};
use crate::preprocess::TelemetryRecord;

pub const MIN_TRAINING_PAIRS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub g_poa: f64,
    pub t_module: f64,
    /// Hour of day over 24, in `[0, 1)`.
    pub hod: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; 3] {
        [self.g_poa, self.t_module, self.hod]
    }
}

impl From<&WeatherPoint> for FeatureVector {
    fn from(w: &WeatherPoint) -> Self {
        Self { g_poa: w.g_poa, t_module: w.t_module, hod: w.hod() }
    }
}

impl From<&TelemetryRecord> for FeatureVector {
    fn from(r: &TelemetryRecord) -> Self {
        Self { g_poa: r.g_poa, t_module: r.t_module, hod: hod(&r.timestamp) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorFamily {
    Linear,
    KernelRidge,
}

impl RegressorFamily {
    pub fn name(&self) -> &'static str {
        match self {
            RegressorFamily::Linear => "lr",
            RegressorFamily::KernelRidge => "kr",
        }
    }
}

/// `lambda` is the ridge strength, `gamma` the RBF bandwidth (ignored by the linear family).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self { lambda: 1e-2, gamma: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorModel {
    pub family: RegressorFamily,
    pub hyperparams: Hyperparams,
    pub feature_mean: [f64; 3],
    pub feature_std: [f64; 3],
    /// Linear: feature weights. Kernel ridge: dual coefficients, one per training point.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Standardised training features (kernel ridge only).
    pub support: Vec<[f64; 3]>,
}

/// Daylight training pairs (`g_poa >= g_min`).
pub fn training_pairs(records: &[TelemetryRecord], g_min: f64) -> (Vec<FeatureVector>, Vec<f64>) {
    records.iter().filter(|r| r.g_poa >= g_min).map(|r| (FeatureVector::from(r), r.power())).unzip()
}

fn standardise(x: &[f64; 3], mean: &[f64; 3], std: &[f64; 3]) -> [f64; 3] {
    [(x[0] - mean[0]) / std[0], (x[1] - mean[1]) / std[1], (x[2] - mean[2]) / std[2]]
}

fn rbf(a: &[f64; 3], b: &[f64; 3], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

pub fn train_regressor(
    family: RegressorFamily,
    features: &[FeatureVector],
    targets: &[f64],
    hp: Hyperparams,
) -> Result<RegressorModel> {
    let n = features.len();
    if n != targets.len() {
        return Err(Error::InvalidInput(format!("{n} feature rows but {} targets", targets.len())));
    }
    if n < MIN_TRAINING_PAIRS {
        return Err(Error::InsufficientData(format!("{n} training pairs, need {MIN_TRAINING_PAIRS}")));
    }
    if !(hp.lambda >= 0.0 && hp.lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("ridge strength {} must be finite and >= 0", hp.lambda)));
    }
    if family == RegressorFamily::KernelRidge && !(hp.gamma > 0.0 && hp.gamma.is_finite()) {
        return Err(Error::InvalidInput(format!("kernel bandwidth {} must be positive", hp.gamma)));
    }
    let raw: Vec<[f64; 3]> = features.iter().map(FeatureVector::as_array).collect();
    if raw.iter().flatten().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite training data".into()));
    }
    let nf = n as f64;
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for j in 0..3 {
        mean[j] = raw.iter().map(|x| x[j]).sum::<f64>() / nf;
        std[j] = (raw.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / nf).sqrt();
        if !(std[j] > 1e-12 * mean[j].abs().max(1.0)) {
            let name = ["g_poa", "t_module", "hod"][j];
            return Err(Error::Training(format!("feature {name} is constant over the training set")));
        }
    }
    let z: Vec<[f64; 3]> = raw.iter().map(|x| standardise(x, &mean, &std)).collect();

    match family {
        RegressorFamily::Linear => {
            let y_mean = targets.iter().sum::<f64>() / nf;
            let x = DMatrix::from_fn(n, 3, |i, j| z[i][j]);
            let y = DVector::from_iterator(n, targets.iter().map(|t| t - y_mean));
            let mut a = x.transpose() * &x;
            for j in 0..3 {
                a[(j, j)] += hp.lambda;
            }
            let b = x.transpose() * y;
            let w = a
                .cholesky()
                .map(|c| c.solve(&b))
                .ok_or_else(|| Error::Training("normal equations are singular".into()))?;
            Ok(RegressorModel {
                family,
                hyperparams: hp,
                feature_mean: mean,
                feature_std: std,
                coefficients: w.iter().copied().collect(),
                intercept: y_mean,
                support: Vec::new(),
            })
        }
        RegressorFamily::KernelRidge => {
            let mut k = DMatrix::from_fn(n, n, |i, j| rbf(&z[i], &z[j], hp.gamma));
            for i in 0..n {
                k[(i, i)] += hp.lambda;
            }
            let y = DVector::from_column_slice(targets);
            let alpha = k
                .cholesky()
                .map(|c| c.solve(&y))
                .ok_or_else(|| Error::Training("kernel system is not positive definite".into()))?;
            if alpha.iter().any(|v| !v.is_finite()) {
                return Err(Error::Training("kernel solve produced non-finite coefficients".into()));
            }
            Ok(RegressorModel {
                family,
                hyperparams: hp,
                feature_mean: mean,
                feature_std: std,
                coefficients: alpha.iter().copied().collect(),
                intercept: 0.0,
                support: z,
            })
        }
    }
}

impl RegressorModel {
    /// Raw model output before clamping.
    pub fn evaluate(&self, f: &FeatureVector) -> f64 {
        let z = standardise(&f.as_array(), &self.feature_mean, &self.feature_std);
        match self.family {
            RegressorFamily::Linear => self.intercept + z.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>(),
            RegressorFamily::KernelRidge => {
                self.intercept
                    + self.support.iter().zip(&self.coefficients).map(|(s, a)| a * rbf(s, &z, self.hyperparams.gamma)).sum::<f64>()
            }
        }
    }
}

/// Predictions with negative values clamped to zero.
pub fn predict_regressor(model: &RegressorModel, features: &[FeatureVector]) -> Vec<f64> {
    features.iter().map(|f| model.evaluate(f).max(0.0)).collect()
}

pub fn forecast_regressor(model: &RegressorModel, weather: &[WeatherPoint]) -> ForecastSeries {
    let points = weather
        .iter()
        .map(|w| ForecastPoint { timestamp: w.timestamp, p_pred: model.evaluate(&FeatureVector::from(w)).max(0.0) })
        .collect();
    ForecastSeries { model: model.family.name().into(), points }
}
