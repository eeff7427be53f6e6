//! Capacity-normalised error metrics and the grouping studies built on them.

pub mod studies;

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::SkyLabel;

pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.10, 0.20];
pub const DEFAULT_CLEAR_THRESHOLD: f64 = 0.05;
/// Coefficient of variation above which a model is called weather-sensitive.
pub const WEATHER_SENSITIVE_CV: f64 = 0.20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exceedance {
    pub threshold: f64,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub nmae: f64,
    pub nrmse: f64,
    pub nbe_series: Vec<f64>,
    pub nbe_mean: f64,
    pub exceedance: Vec<Exceedance>,
}

/// One scored sample: prediction, measurement and measured irradiance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub timestamp: DateTime<Utc>,
    pub p_pred: f64,
    pub p_meas: f64,
    pub g_poa: f64,
}

/// nMAE, nRMSE and per-sample nBE against `p_nominal`. With `daylight_g_min`
/// set, samples whose measured irradiance is below it are left out.
pub fn compute_metrics(
    pred: &[f64],
    meas: &[f64],
    g_poa: &[f64],
    p_nominal: f64,
    daylight_g_min: Option<f64>,
) -> Result<MetricsReport> {
    if pred.len() != meas.len() || pred.len() != g_poa.len() {
        return Err(Error::Alignment(format!(
            "series lengths differ: pred {}, meas {}, g_poa {}",
            pred.len(),
            meas.len(),
            g_poa.len()
        )));
    }
    if !(p_nominal > 0.0 && p_nominal.is_finite()) {
        return Err(Error::InvalidInput(format!("nominal capacity must be positive, got {p_nominal}")));
    }
    let nbe: Vec<f64> = pred
        .iter()
        .zip(meas)
        .zip(g_poa)
        .filter(|(_, g)| daylight_g_min.is_none_or(|g_min| **g >= g_min))
        .map(|((p, m), _)| (p - m) / p_nominal)
        .collect();
    metrics_from_nbe(nbe)
}

pub fn metrics_from_samples(samples: &[ScoredSample], p_nominal: f64, daylight_g_min: Option<f64>) -> Result<MetricsReport> {
    let pred: Vec<f64> = samples.iter().map(|s| s.p_pred).collect();
    let meas: Vec<f64> = samples.iter().map(|s| s.p_meas).collect();
    let g: Vec<f64> = samples.iter().map(|s| s.g_poa).collect();
    compute_metrics(&pred, &meas, &g, p_nominal, daylight_g_min)
}

fn metrics_from_nbe(nbe: Vec<f64>) -> Result<MetricsReport> {
    if nbe.is_empty() {
        return Err(Error::InsufficientData("no samples left to score".into()));
    }
    if nbe.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite prediction or measurement".into()));
    }
    let n = nbe.len() as f64;
    let nmae = nbe.iter().map(|e| e.abs()).sum::<f64>() / n;
    let nrmse = (nbe.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let nbe_mean = nbe.iter().sum::<f64>() / n;
    let exceedance = exceedance_density(&nbe, &DEFAULT_THRESHOLDS)?;
    Ok(MetricsReport { n_samples: nbe.len(), nmae, nrmse, nbe_series: nbe, nbe_mean, exceedance })
}

/// Fraction of samples with `nBE > threshold`, per threshold.
pub fn exceedance_density(nbe: &[f64], thresholds: &[f64]) -> Result<Vec<Exceedance>> {
    if nbe.is_empty() {
        return Err(Error::InsufficientData("empty nBE series".into()));
    }
    let n = nbe.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&threshold| Exceedance { threshold, density: nbe.iter().filter(|e| **e > threshold).count() as f64 / n })
        .collect())
}

/// Population standard deviation over the mean.
pub fn coefficient_of_variation(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("no values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(Error::InvalidInput("coefficient of variation undefined for zero mean".into()));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Season {
    Spring,
    Summer,
    Fall,
    Winter,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Spring, Season::Summer, Season::Fall, Season::Winter];

    /// Meteorological seasons by month; 29 February is winter.
    pub fn of(date: NaiveDate) -> Season {
        match date.month() {
            3..=5 => Season::Spring,
            6..=8 => Season::Summer,
            9..=11 => Season::Fall,
            _ => Season::Winter,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Season::Spring => "spring",
            Season::Summer => "summer",
            Season::Fall => "fall",
            Season::Winter => "winter",
        }
    }
}

/// Metrics per season; seasons without samples are absent from the map.
pub fn seasonal_partition(
    samples: &[ScoredSample],
    p_nominal: f64,
    daylight_g_min: Option<f64>,
) -> Result<BTreeMap<Season, MetricsReport>> {
    let mut groups: BTreeMap<Season, Vec<ScoredSample>> = BTreeMap::new();
    for s in samples {
        groups.entry(Season::of(s.timestamp.date_naive())).or_default().push(*s);
    }
    let mut out = BTreeMap::new();
    for (season, group) in groups {
        match metrics_from_samples(&group, p_nominal, daylight_g_min) {
            Ok(m) => {
                out.insert(season, m);
            }
            Err(Error::InsufficientData(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Power sample used for sky classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerObservation {
    pub timestamp: DateTime<Utc>,
    pub g_poa: f64,
    pub p: f64,
}

/// Mean relative departure of daylight power from the midpoint of its two
/// neighbours. Smooth clear-sky curves score near zero, cloud transients do not.
pub fn variability_index(day: &[PowerObservation], g_min: f64) -> Option<f64> {
    let lit: Vec<f64> = day.iter().filter(|o| o.g_poa >= g_min).map(|o| o.p).collect();
    if lit.len() < 3 {
        return None;
    }
    let terms: Vec<f64> = lit
        .windows(3)
        .filter_map(|w| {
            let mid = 0.5 * (w[0] + w[2]);
            (mid > 0.0).then(|| (w[1] - mid).abs() / mid)
        })
        .collect();
    if terms.is_empty() {
        return None;
    }
    Some(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Clear when the day's variability index is below `threshold`. Days with too
/// few daylight samples are not labelled.
pub fn classify_days(series: &[PowerObservation], g_min: f64, threshold: f64) -> BTreeMap<NaiveDate, SkyLabel> {
    let mut days: BTreeMap<NaiveDate, Vec<PowerObservation>> = BTreeMap::new();
    for o in series {
        days.entry(o.timestamp.date_naive()).or_default().push(*o);
    }
    days.into_iter()
        .filter_map(|(date, mut obs)| {
            obs.sort_by_key(|o| o.timestamp);
            let idx = variability_index(&obs, g_min)?;
            Some((date, if idx < threshold { SkyLabel::Clear } else { SkyLabel::Cloudy }))
        })
        .collect()
}
