//! Day-ahead benchmark: for each forecast day every roster model is trained on
//! data strictly before that day, predicts it from the day's measured weather,
//! and is scored against the measured power.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::analysis::studies::{
    interpretability_sweep, sweep_anchor, training_length_sweep, weather_case_study, SweepCurve, SweepFeature, SweepModel,
    TrainingLengthRow, WeatherCaseSummary, WeatherSplit,
};
use crate::analysis::{
    classify_days, compute_metrics, exceedance_density, seasonal_partition, Exceedance, MetricsReport, PowerObservation,
    ScoredSample, Season,
};
use crate::baselines::grid::{grid_search, GridSearchResult};
use crate::baselines::regression::{Hyperparams, RegressorModel};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fit::{slice_window, FitWindowResult, RollingEntry};
use crate::forecast::WeatherPoint;
use crate::io::{read_telemetry, ColumnMapping, Diagnostic, ForecastRow};
use crate::models::{train_and_predict, ModelContext, ModelKind};
use crate::preprocess::TelemetryRecord;
use crate::sdm::{ArrayTopology, SdmParamsRef};
use crate::synth::{generate_dataset, inject_clipping, GroundTruthLog, SkyLabel, SyntheticDataset};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<TelemetryRecord>,
    pub truth: Option<GroundTruthLog>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Synthetic data from the config; the run seed replaces the profile seed.
pub fn synthesize(cfg: &RunConfig) -> Result<SyntheticDataset> {
    let syn = cfg
        .data
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::Config("data.synthetic section missing".into()))?;
    let mut profile = syn.profile.clone();
    profile.seed = cfg.seed;
    let mut ds = generate_dataset(&syn.true_params, &cfg.system.topology, &profile, &syn.scenario, syn.noise_v, syn.noise_i)?;
    if let Some(limit) = syn.clip_limit_w {
        inject_clipping(&mut ds.records, limit);
    }
    Ok(ds)
}

/// Telemetry file when configured, synthetic data otherwise.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    if let Some(path) = &cfg.data.telemetry {
        let mapping = cfg.data.mapping.as_deref().map(ColumnMapping::from_file).transpose()?;
        let ingest = read_telemetry(path, mapping.as_ref())?;
        return Ok(Dataset { records: ingest.records, truth: None, diagnostics: ingest.diagnostics });
    }
    let ds = synthesize(cfg)?;
    Ok(Dataset { records: ds.records, truth: Some(ds.truth), diagnostics: Vec::new() })
}

fn midnight(d: NaiveDate) -> DateTime<Utc> {
    d.and_hms_opt(0, 0, 0).expect("midnight").and_utc()
}

/// Calendar days spanned by the series, first to last.
pub fn series_days(records: &[TelemetryRecord]) -> Vec<NaiveDate> {
    let (Some(a), Some(b)) = (records.first(), records.last()) else {
        return Vec::new();
    };
    let first = a.timestamp.date_naive();
    let n = (b.timestamp.date_naive() - first).num_days();
    (0..=n).map(|k| first + Duration::days(k)).collect()
}

/// Regressor settings chosen before the first forecast day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorSelection {
    pub hyperparams: Hyperparams,
    pub training_days: u32,
    /// Present when the settings came from a grid search.
    pub grid: Option<GridSearchResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayPrediction {
    pub date: NaiveDate,
    pub outcome: std::result::Result<Vec<f64>, String>,
}

/// Predictions of every roster model for every forecast day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayAheadRun {
    pub forecast_days: Vec<NaiveDate>,
    pub predictions: BTreeMap<ModelKind, Vec<DayPrediction>>,
    pub selection: BTreeMap<ModelKind, std::result::Result<RegressorSelection, String>>,
    /// One entry per forecast day for the physical fit.
    pub trajectory: Vec<RollingEntry>,
    pub last_fit: Option<FitWindowResult>,
    pub last_regressors: BTreeMap<ModelKind, RegressorModel>,
}

fn select_regressor(
    cfg: &RunConfig,
    kind: ModelKind,
    history: &[TelemetryRecord],
    first_day: DateTime<Utc>,
) -> std::result::Result<RegressorSelection, String> {
    let family = kind.family().expect("regressor");
    let fixed = match kind {
        ModelKind::Lr => cfg.models.lr,
        _ => cfg.models.kr,
    };
    if let Some(s) = fixed {
        return Ok(RegressorSelection { hyperparams: s.hyperparams, training_days: s.training_days, grid: None });
    }
    grid_search(&cfg.models.grid, family, history, first_day, cfg.p_nominal(), cfg.preprocess.g_min)
        .map(|g| RegressorSelection { hyperparams: g.best_hyperparams, training_days: g.best_training_days, grid: Some(g) })
        .map_err(|e| e.to_string())
}

/// Runs the forecast loop without scoring.
pub fn run_day_ahead(cfg: &RunConfig, ctx: &ModelContext, records: &[TelemetryRecord]) -> Result<DayAheadRun> {
    crate::preprocess::validate_series(records)?;
    let days = series_days(records);
    let first = cfg.models.first_forecast_day.unwrap_or(cfg.fit.window_days as usize);
    if first == 0 || first >= days.len() {
        return Err(Error::InsufficientData(format!(
            "first forecast day {first} leaves nothing to forecast in {} days of data",
            days.len()
        )));
    }
    let forecast_days = days[first..].to_vec();
    let window = cfg.schedule().window_length;

    let mut selection = BTreeMap::new();
    for kind in &cfg.models.roster {
        if kind.family().is_some() {
            let start = midnight(forecast_days[0]);
            let history = slice_window(records, records[0].timestamp, start);
            selection.insert(*kind, select_regressor(cfg, *kind, history, start));
        }
    }

    let mut predictions: BTreeMap<ModelKind, Vec<DayPrediction>> = BTreeMap::new();
    let mut trajectory = Vec::new();
    let mut warm: Option<SdmParamsRef> = None;
    let mut last_fit = None;
    let mut last_regressors = BTreeMap::new();
    for &date in &forecast_days {
        let start = midnight(date);
        let target = slice_window(records, start, start + Duration::days(1));
        let weather: Vec<WeatherPoint> = target.iter().map(WeatherPoint::from).collect();
        for &kind in &cfg.models.roster {
            let mut day_ctx;
            let mut ctx_ref = ctx;
            let training: &[TelemetryRecord] = match kind {
                ModelKind::Pvpro => slice_window(records, start - window, start),
                ModelKind::Nominal => &[],
                ModelKind::SmartPersistence | ModelKind::NaivePersistence => slice_window(records, records[0].timestamp, start),
                ModelKind::Lr | ModelKind::Kr => match &selection[&kind] {
                    Ok(sel) => {
                        day_ctx = ctx.clone();
                        match kind {
                            ModelKind::Lr => day_ctx.lr = sel.hyperparams,
                            _ => day_ctx.kr = sel.hyperparams,
                        }
                        ctx_ref = &day_ctx;
                        slice_window(records, start - Duration::days(i64::from(sel.training_days)), start)
                    }
                    Err(reason) => {
                        predictions
                            .entry(kind)
                            .or_default()
                            .push(DayPrediction { date, outcome: Err(format!("no regressor settings: {reason}")) });
                        continue;
                    }
                },
            };
            let outcome = if weather.is_empty() {
                Err(Error::InsufficientData(format!("no weather samples on {date}")))
            } else {
                train_and_predict(kind, ctx_ref, training, &weather, warm.as_ref())
            };
            if kind == ModelKind::Pvpro {
                let fit = outcome.as_ref().map_err(Clone::clone).and_then(|p| {
                    p.fit.clone().ok_or_else(|| Error::InvalidInput("physical model returned no fit".into()))
                });
                if let Ok(f) = &fit {
                    warm = Some(f.params);
                    last_fit = Some(f.clone());
                }
                let fit = fit.map(|mut f| {
                    f.window_start = start - window;
                    f.window_end = start;
                    f
                });
                trajectory.push(RollingEntry { window_start: start - window, window_end: start, outcome: fit });
            }
            if let Ok(p) = &outcome {
                if let Some(m) = &p.regressor {
                    last_regressors.insert(kind, m.clone());
                }
            }
            predictions
                .entry(kind)
                .or_default()
                .push(DayPrediction { date, outcome: outcome.map(|p| p.forecast.values()).map_err(|e| e.to_string()) });
        }
    }
    Ok(DayAheadRun { forecast_days, predictions, selection, trajectory, last_fit, last_regressors })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayOutcome {
    pub date: NaiveDate,
    pub metrics: Option<MetricsReport>,
    pub skip_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyOutcome<T> {
    Ok(T),
    Failed(String),
}

impl<T> From<Result<T>> for StudyOutcome<T> {
    fn from(r: Result<T>) -> Self {
        match r {
            Ok(v) => StudyOutcome::Ok(v),
            Err(e) => StudyOutcome::Failed(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherCasesReport {
    pub labels: BTreeMap<NaiveDate, SkyLabel>,
    pub split: WeatherSplit,
    pub models: BTreeMap<ModelKind, WeatherCaseSummary>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Studies {
    pub seasonal: Option<BTreeMap<ModelKind, BTreeMap<Season, MetricsReport>>>,
    pub exceedance: Option<BTreeMap<ModelKind, Vec<Exceedance>>>,
    pub weather_cases: Option<StudyOutcome<WeatherCasesReport>>,
    pub sweeps: Option<BTreeMap<ModelKind, Vec<SweepCurve>>>,
    pub training_length: Option<BTreeMap<ModelKind, StudyOutcome<Vec<TrainingLengthRow>>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub n_records: usize,
    pub ingest_diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub p_nominal: f64,
    pub topology: ArrayTopology,
    pub nominal_params: Option<SdmParamsRef>,
    pub climate_zone: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema_version: u32,
    /// Wall-clock time of the run; the only field that varies between identical runs.
    pub generated_at: Option<String>,
    pub provenance: Provenance,
    pub system: SystemSummary,
    pub roster: Vec<ModelKind>,
    pub forecast_days: Vec<NaiveDate>,
    pub daily: BTreeMap<ModelKind, Vec<DayOutcome>>,
    /// Pooled over every scored sample; absent when no day could be scored.
    pub aggregate: BTreeMap<ModelKind, Option<MetricsReport>>,
    pub selection: BTreeMap<ModelKind, StudyOutcome<RegressorSelection>>,
    pub studies: Studies,
}

impl BenchmarkReport {
    pub fn aggregate_nmae(&self, kind: ModelKind) -> Option<f64> {
        self.aggregate.get(&kind).and_then(|m| m.as_ref()).map(|m| m.nmae)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOutput {
    pub report: BenchmarkReport,
    pub forecasts: Vec<ForecastRow>,
    pub trajectory: Vec<RollingEntry>,
}

/// Full benchmark over an already loaded dataset.
pub fn run_benchmark(cfg: &RunConfig, data: &Dataset) -> Result<BenchmarkOutput> {
    let ctx = cfg.model_context()?;
    let records = &data.records;
    let run = run_day_ahead(cfg, &ctx, records)?;
    let p_nominal = cfg.p_nominal();
    let g_min = cfg.preprocess.g_min;
    let daylight = cfg.studies.daylight_only.then_some(g_min);

    let mut daily: BTreeMap<ModelKind, Vec<DayOutcome>> = BTreeMap::new();
    let mut pooled: BTreeMap<ModelKind, Vec<ScoredSample>> = BTreeMap::new();
    let mut forecasts = Vec::new();
    for (&kind, preds) in &run.predictions {
        let rows = daily.entry(kind).or_default();
        let pool = pooled.entry(kind).or_default();
        for dp in preds {
            let start = midnight(dp.date);
            let target = slice_window(records, start, start + Duration::days(1));
            match &dp.outcome {
                Err(reason) => rows.push(DayOutcome { date: dp.date, metrics: None, skip_reason: Some(reason.clone()) }),
                Ok(values) => {
                    let meas: Vec<f64> = target.iter().map(TelemetryRecord::power).collect();
                    let g: Vec<f64> = target.iter().map(|r| r.g_poa).collect();
                    for (r, p) in target.iter().zip(values) {
                        forecasts.push(ForecastRow {
                            timestamp: r.timestamp,
                            model: kind.name().into(),
                            p_pred_w: *p,
                            p_meas_w: r.power(),
                        });
                        pool.push(ScoredSample { timestamp: r.timestamp, p_pred: *p, p_meas: r.power(), g_poa: r.g_poa });
                    }
                    match compute_metrics(values, &meas, &g, p_nominal, daylight) {
                        Ok(m) => rows.push(DayOutcome { date: dp.date, metrics: Some(m), skip_reason: None }),
                        Err(e) => rows.push(DayOutcome { date: dp.date, metrics: None, skip_reason: Some(e.to_string()) }),
                    }
                }
            }
        }
    }
    forecasts.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.model.cmp(&b.model)));

    let mut aggregate = BTreeMap::new();
    for (&kind, pool) in &pooled {
        aggregate.insert(kind, crate::analysis::metrics_from_samples(pool, p_nominal, daylight).ok());
    }

    let studies = run_studies(cfg, &ctx, records, &run, &pooled, &aggregate)?;
    let selection = run.selection.iter().map(|(k, v)| (*k, v.clone().map_err(Error::Training).into())).collect();

    let report = BenchmarkReport {
        schema_version: SCHEMA_VERSION,
        generated_at: None,
        provenance: Provenance {
            tool: "pvprof".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            n_records: records.len(),
            ingest_diagnostics: data.diagnostics.clone(),
        },
        system: SystemSummary {
            p_nominal,
            topology: cfg.system.topology,
            nominal_params: ctx.nominal,
            climate_zone: cfg.system.climate_zone.clone(),
        },
        roster: cfg.models.roster.clone(),
        forecast_days: run.forecast_days.clone(),
        daily,
        aggregate,
        selection,
        studies,
    };
    Ok(BenchmarkOutput { report, forecasts, trajectory: run.trajectory })
}

fn run_studies(
    cfg: &RunConfig,
    ctx: &ModelContext,
    records: &[TelemetryRecord],
    run: &DayAheadRun,
    pooled: &BTreeMap<ModelKind, Vec<ScoredSample>>,
    aggregate: &BTreeMap<ModelKind, Option<MetricsReport>>,
) -> Result<Studies> {
    let sc = &cfg.studies;
    let p_nominal = cfg.p_nominal();
    let g_min = cfg.preprocess.g_min;
    let daylight = sc.daylight_only.then_some(g_min);
    let mut studies = Studies::default();

    // Regressor settings as selected for the forecast loop.
    let mut tuned = ctx.clone();
    for (kind, sel) in &run.selection {
        if let Ok(s) = sel {
            match kind {
                ModelKind::Lr => tuned.lr = s.hyperparams,
                _ => tuned.kr = s.hyperparams,
            }
        }
    }

    if sc.seasonal {
        let mut m = BTreeMap::new();
        for (kind, pool) in pooled {
            m.insert(*kind, seasonal_partition(pool, p_nominal, daylight)?);
        }
        studies.seasonal = Some(m);
    }
    if sc.exceedance {
        let mut m = BTreeMap::new();
        for (kind, agg) in aggregate {
            if let Some(agg) = agg {
                m.insert(*kind, exceedance_density(&agg.nbe_series, &sc.exceedance_thresholds)?);
            }
        }
        studies.exceedance = Some(m);
    }
    if sc.weather_cases {
        let obs: Vec<PowerObservation> =
            records.iter().map(|r| PowerObservation { timestamp: r.timestamp, g_poa: r.g_poa, p: r.power() }).collect();
        let labels = classify_days(&obs, g_min, sc.clear_threshold);
        let kinds: Vec<ModelKind> = cfg
            .models
            .roster
            .iter()
            .copied()
            .filter(|k| !matches!(k, ModelKind::SmartPersistence | ModelKind::NaivePersistence))
            .collect();
        let outcome = WeatherSplit::new(&labels).and_then(|split| {
            weather_case_study(records, &labels, &kinds, &tuned, p_nominal)
                .map(|models| WeatherCasesReport { labels: labels.clone(), split, models })
        });
        studies.weather_cases = Some(outcome.into());
    }
    if sc.sweep {
        let mut m = BTreeMap::new();
        let reference = ctx.nominal.as_ref().map(|p| (p, &ctx.topology));
        for kind in &cfg.models.roster {
            let model = match kind {
                ModelKind::Pvpro => run.last_fit.as_ref().map(|f| SweepModel::Physical { params: &f.params, topology: &ctx.topology }),
                ModelKind::Nominal => ctx.nominal.as_ref().map(|p| SweepModel::Physical { params: p, topology: &ctx.topology }),
                ModelKind::Lr | ModelKind::Kr => run.last_regressors.get(kind).map(SweepModel::Regressor),
                _ => None,
            };
            let Some(model) = model else { continue };
            let curves = [SweepFeature::GPoa, SweepFeature::TModule, SweepFeature::Hod]
                .into_iter()
                .map(|f| interpretability_sweep(model, f, f.range(), sc.sweep_points, sweep_anchor(), reference))
                .collect::<Result<Vec<_>>>()?;
            m.insert(*kind, curves);
        }
        studies.sweeps = Some(m);
    }
    if sc.training_length {
        let mut m = BTreeMap::new();
        for kind in &cfg.models.roster {
            if matches!(kind, ModelKind::Pvpro | ModelKind::Lr | ModelKind::Kr) {
                let rows =
                    training_length_sweep(*kind, records, &sc.training_lengths, sc.training_length_eval_days, &tuned, p_nominal);
                m.insert(*kind, rows.into());
            }
        }
        studies.training_length = Some(m);
    }
    Ok(studies)
}
