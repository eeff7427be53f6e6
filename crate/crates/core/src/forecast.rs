//! Shared forecast containers.

use chrono::{DateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::preprocess::TelemetryRecord;

/// Weather inputs for one forecast timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherPoint {
    pub timestamp: DateTime<Utc>,
    pub g_poa: f64,
    pub t_module: f64,
}

impl From<&TelemetryRecord> for WeatherPoint {
    fn from(r: &TelemetryRecord) -> Self {
        Self { timestamp: r.timestamp, g_poa: r.g_poa, t_module: r.t_module }
    }
}

impl WeatherPoint {
    /// Hour of day divided by 24, in `[0, 1)`.
    pub fn hod(&self) -> f64 {
        hod(&self.timestamp)
    }
}

pub fn hod(ts: &DateTime<Utc>) -> f64 {
    f64::from(ts.num_seconds_from_midnight()) / 86_400.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub timestamp: DateTime<Utc>,
    /// Predicted power (W).
    pub p_pred: f64,
}

/// Timestamped predictions from one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSeries {
    pub model: String,
    pub points: Vec<ForecastPoint>,
}

impl ForecastSeries {
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.p_pred).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
