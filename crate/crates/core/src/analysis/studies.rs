//! Weather-case, interpretability and training-length studies.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::analysis::{coefficient_of_variation, metrics_from_samples, MetricsReport, ScoredSample, WEATHER_SENSITIVE_CV};
use crate::baselines::regression::{FeatureVector, RegressorModel};
use crate::error::{Error, Result};
use crate::fit::slice_window;
use crate::forecast::WeatherPoint;
use crate::models::{train_and_predict, ModelContext, ModelKind};
use crate::preprocess::TelemetryRecord;
use crate::sdm::{array_power, ArrayTopology, OperatingConditions, SdmParamsRef};
use crate::synth::SkyLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainSet {
    Clear,
    Cloudy,
    Mixed,
}

/// The six (training set, test set) combinations in report order.
pub const WEATHER_CASES: [(TrainSet, SkyLabel); 6] = [
    (TrainSet::Clear, SkyLabel::Clear),
    (TrainSet::Clear, SkyLabel::Cloudy),
    (TrainSet::Cloudy, SkyLabel::Clear),
    (TrainSet::Cloudy, SkyLabel::Cloudy),
    (TrainSet::Mixed, SkyLabel::Clear),
    (TrainSet::Mixed, SkyLabel::Cloudy),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherCase {
    pub train: TrainSet,
    pub test: SkyLabel,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherCaseSummary {
    pub cases: Vec<WeatherCase>,
    pub cv_nmae: f64,
    pub cv_nrmse: f64,
    pub weather_sensitive: bool,
}

/// Day split used by the weather-case study: each label's days in date
/// order, earlier half for training and later half for testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherSplit {
    pub train_clear: Vec<NaiveDate>,
    pub train_cloudy: Vec<NaiveDate>,
    pub test_clear: Vec<NaiveDate>,
    pub test_cloudy: Vec<NaiveDate>,
}

impl WeatherSplit {
    pub fn new(labels: &BTreeMap<NaiveDate, SkyLabel>) -> Result<Self> {
        let pick = |l: SkyLabel| labels.iter().filter(|(_, v)| **v == l).map(|(d, _)| *d).collect::<Vec<_>>();
        let clear = pick(SkyLabel::Clear);
        let cloudy = pick(SkyLabel::Cloudy);
        if clear.len() < 2 || cloudy.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "weather cases need at least 2 clear and 2 cloudy days, found {} clear and {} cloudy",
                clear.len(),
                cloudy.len()
            )));
        }
        let (a, b) = clear.split_at(clear.len() / 2);
        let (c, d) = cloudy.split_at(cloudy.len() / 2);
        Ok(Self { train_clear: a.to_vec(), test_clear: b.to_vec(), train_cloudy: c.to_vec(), test_cloudy: d.to_vec() })
    }

    fn train_days(&self, set: TrainSet) -> Vec<NaiveDate> {
        let mut days = match set {
            TrainSet::Clear => self.train_clear.clone(),
            TrainSet::Cloudy => self.train_cloudy.clone(),
            TrainSet::Mixed => self.train_clear.iter().chain(&self.train_cloudy).copied().collect(),
        };
        days.sort();
        days
    }

    fn test_days(&self, label: SkyLabel) -> &[NaiveDate] {
        match label {
            SkyLabel::Clear => &self.test_clear,
            SkyLabel::Cloudy => &self.test_cloudy,
        }
    }
}

fn records_on(series: &[TelemetryRecord], days: &[NaiveDate]) -> Vec<TelemetryRecord> {
    series.iter().filter(|r| days.binary_search(&r.timestamp.date_naive()).is_ok()).copied().collect()
}

fn score(pred: &[f64], truth: &[TelemetryRecord]) -> Vec<ScoredSample> {
    pred.iter()
        .zip(truth)
        .map(|(p, r)| ScoredSample { timestamp: r.timestamp, p_pred: *p, p_meas: r.power(), g_poa: r.g_poa })
        .collect()
}

/// Trains each model on clear, cloudy and mixed days and tests on clear and
/// cloudy days, reporting the coefficient of variation across the six cases.
pub fn weather_case_study(
    series: &[TelemetryRecord],
    labels: &BTreeMap<NaiveDate, SkyLabel>,
    kinds: &[ModelKind],
    ctx: &ModelContext,
    p_nominal: f64,
) -> Result<BTreeMap<ModelKind, WeatherCaseSummary>> {
    let split = WeatherSplit::new(labels)?;
    let mut out = BTreeMap::new();
    for &kind in kinds {
        if matches!(kind, ModelKind::SmartPersistence | ModelKind::NaivePersistence) {
            return Err(Error::InvalidInput(format!("{kind} has no training set and cannot enter weather cases")));
        }
        let mut cases = Vec::with_capacity(6);
        for (train, test) in WEATHER_CASES {
            let training = records_on(series, &split.train_days(train));
            let testing = records_on(series, split.test_days(test));
            let weather: Vec<WeatherPoint> = testing.iter().map(WeatherPoint::from).collect();
            let pred = train_and_predict(kind, ctx, &training, &weather, None)?;
            let metrics = metrics_from_samples(&score(&pred.forecast.values(), &testing), p_nominal, Some(ctx.g_min()))?;
            cases.push(WeatherCase { train, test, metrics });
        }
        let nmae: Vec<f64> = cases.iter().map(|c| c.metrics.nmae).collect();
        let nrmse: Vec<f64> = cases.iter().map(|c| c.metrics.nrmse).collect();
        let cv_nmae = coefficient_of_variation(&nmae)?;
        let cv_nrmse = coefficient_of_variation(&nrmse)?;
        out.insert(kind, WeatherCaseSummary { cases, cv_nmae, cv_nrmse, weather_sensitive: cv_nmae > WEATHER_SENSITIVE_CV });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepFeature {
    GPoa,
    TModule,
    Hod,
}

impl SweepFeature {
    pub fn name(&self) -> &'static str {
        match self {
            SweepFeature::GPoa => "g_poa",
            SweepFeature::TModule => "t_module",
            SweepFeature::Hod => "hod",
        }
    }

    /// Default sweep range.
    pub fn range(&self) -> (f64, f64) {
        match self {
            SweepFeature::GPoa => (0.0, 1000.0),
            SweepFeature::TModule => (0.0, 70.0),
            SweepFeature::Hod => (0.0, 1.0),
        }
    }
}

pub const SWEEP_POINTS: usize = 101;

/// Fixed point for sweeps: 1000 W/m², 25 °C, noon.
pub fn sweep_anchor() -> FeatureVector {
    FeatureVector { g_poa: 1000.0, t_module: 25.0, hod: 0.5 }
}

#[derive(Debug, Clone, Copy)]
pub enum SweepModel<'a> {
    Physical { params: &'a SdmParamsRef, topology: &'a ArrayTopology },
    Regressor(&'a RegressorModel),
}

impl SweepModel<'_> {
    fn power(&self, f: &FeatureVector) -> Result<f64> {
        match self {
            SweepModel::Physical { params, topology } => {
                array_power(params, topology, &OperatingConditions { g_poa: f.g_poa, t_cell: f.t_module })
            }
            SweepModel::Regressor(m) => Ok(m.evaluate(f).max(0.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub feature: SweepFeature,
    pub x: Vec<f64>,
    pub power: Vec<f64>,
    /// Curve of the datasheet parameters over the same grid, when requested.
    pub reference: Option<Vec<f64>>,
}

/// Varies one feature over a uniform grid while the others stay at `fixed`.
pub fn interpretability_sweep(
    model: SweepModel<'_>,
    feature: SweepFeature,
    range: (f64, f64),
    points: usize,
    fixed: FeatureVector,
    reference: Option<(&SdmParamsRef, &ArrayTopology)>,
) -> Result<SweepCurve> {
    if points < 2 || !(range.0.is_finite() && range.1.is_finite() && range.1 > range.0) {
        return Err(Error::InvalidInput(format!("bad sweep grid {range:?} with {points} points")));
    }
    let x: Vec<f64> = (0..points).map(|k| range.0 + (range.1 - range.0) * k as f64 / (points - 1) as f64).collect();
    let at = |v: f64| {
        let mut f = fixed;
        match feature {
            SweepFeature::GPoa => f.g_poa = v,
            SweepFeature::TModule => f.t_module = v,
            SweepFeature::Hod => f.hod = v,
        }
        f
    };
    let power = x.iter().map(|v| model.power(&at(*v))).collect::<Result<Vec<_>>>()?;
    let reference = reference
        .map(|(params, topology)| {
            let m = SweepModel::Physical { params, topology };
            x.iter().map(|v| m.power(&at(*v))).collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    Ok(SweepCurve { feature, x, power, reference })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLengthRow {
    pub training_days: u32,
    pub nmae: Option<f64>,
    pub nrmse: Option<f64>,
    pub days_evaluated: usize,
    pub note: Option<String>,
}

/// Day-ahead error per training length over the last `eval_days` days of the
/// series. Every length is scored on the same days.
pub fn training_length_sweep(
    kind: ModelKind,
    series: &[TelemetryRecord],
    lengths: &[u32],
    eval_days: usize,
    ctx: &ModelContext,
    p_nominal: f64,
) -> Result<Vec<TrainingLengthRow>> {
    let (Some(first), Some(last)) = (series.first(), series.last()) else {
        return Err(Error::InsufficientData("empty series".into()));
    };
    let first_day = first.timestamp.date_naive();
    let last_day = last.timestamp.date_naive();
    let n_days = (last_day - first_day).num_days() as usize + 1;
    if eval_days == 0 || eval_days >= n_days {
        return Err(Error::InsufficientData(format!("{eval_days} evaluation days out of {n_days}")));
    }
    let midnight = |d: NaiveDate| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
    let eval: Vec<NaiveDate> = (n_days - eval_days..n_days).map(|k| first_day + Duration::days(k as i64)).collect();

    let mut rows = Vec::with_capacity(lengths.len());
    for &days in lengths {
        let span = Duration::days(i64::from(days));
        if days == 0 || midnight(eval[0]) - span < midnight(first_day) {
            rows.push(TrainingLengthRow {
                training_days: days,
                nmae: None,
                nrmse: None,
                days_evaluated: 0,
                note: Some(format!("{days} days of history not available before {}", eval[0])),
            });
            continue;
        }
        let mut samples = Vec::new();
        let mut notes = Vec::new();
        let mut warm: Option<SdmParamsRef> = None;
        let mut evaluated = 0;
        for &d in &eval {
            let start = midnight(d);
            let training = slice_window(series, start - span, start);
            let target = slice_window(series, start, start + Duration::days(1));
            let weather: Vec<WeatherPoint> = target.iter().map(WeatherPoint::from).collect();
            match train_and_predict(kind, ctx, training, &weather, warm.as_ref()) {
                Ok(p) => {
                    if let Some(f) = &p.fit {
                        warm = Some(f.params);
                    }
                    samples.extend(score(&p.forecast.values(), target));
                    evaluated += 1;
                }
                Err(e) => notes.push(format!("{d}: {e}")),
            }
        }
        let m = metrics_from_samples(&samples, p_nominal, Some(ctx.g_min())).ok();
        rows.push(TrainingLengthRow {
            training_days: days,
            nmae: m.as_ref().map(|m| m.nmae),
            nrmse: m.as_ref().map(|m| m.nrmse),
            days_evaluated: evaluated,
            note: (!notes.is_empty()).then(|| notes.join("; ")),
        });
    }
    Ok(rows)
}
