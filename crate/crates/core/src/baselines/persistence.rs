//! Persistence forecasts: yesterday's power, optionally rescaled by irradiance.

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{ForecastPoint, ForecastSeries, WeatherPoint};
use crate::preprocess::TelemetryRecord;

/// One historical observation of power and the irradiance it was produced under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub timestamp: DateTime<Utc>,
    pub g_poa: f64,
    /// Power (W).
    pub p: f64,
}

impl From<&TelemetryRecord> for PowerSample {
    fn from(r: &TelemetryRecord) -> Self {
        Self { timestamp: r.timestamp, g_poa: r.g_poa, p: r.power() }
    }
}

fn check_sorted(history: &[PowerSample]) -> Result<()> {
    if history.windows(2).any(|w| w[1].timestamp <= w[0].timestamp) {
        return Err(Error::Alignment("history timestamps must be strictly increasing".into()));
    }
    Ok(())
}

fn lookup(history: &[PowerSample], t: DateTime<Utc>) -> Result<usize> {
    history
        .binary_search_by(|s| s.timestamp.cmp(&t))
        .map_err(|_| Error::Alignment(format!("no history sample at {t}")))
}

/// `P(t+h) = P(t)·G(t+h)/G(t)`.
///
/// When `G(t) < g_min` the forecast is 0 if `G(t+h) < g_min`; otherwise the
/// ratio is taken against the nearest earlier sample of the same UTC day with
/// `G >= g_min`, or 0 if there is none.
pub fn smart_persistence(
    history: &[PowerSample],
    future: &[WeatherPoint],
    horizon: Duration,
    g_min: f64,
) -> Result<ForecastSeries> {
    check_sorted(history)?;
    let mut points = Vec::with_capacity(future.len());
    for w in future {
        let k = lookup(history, w.timestamp - horizon)?;
        let base = &history[k];
        let p = if base.g_poa >= g_min {
            base.p * w.g_poa / base.g_poa
        } else if w.g_poa < g_min {
            0.0
        } else {
            let day = base.timestamp.date_naive();
            history[..k]
                .iter()
                .rev()
                .take_while(|s| s.timestamp.date_naive() == day)
                .find(|s| s.g_poa >= g_min)
                .map_or(0.0, |s| s.p * w.g_poa / s.g_poa)
        };
        points.push(ForecastPoint { timestamp: w.timestamp, p_pred: p });
    }
    Ok(ForecastSeries { model: "smart_persistence".into(), points })
}

/// `P(t+h) = P(t)`.
pub fn naive_persistence(history: &[PowerSample], targets: &[DateTime<Utc>], horizon: Duration) -> Result<ForecastSeries> {
    check_sorted(history)?;
    let points = targets
        .iter()
        .map(|&t| lookup(history, t - horizon).map(|k| ForecastPoint { timestamp: t, p_pred: history[k].p }))
        .collect::<Result<Vec<_>>>()?;
    Ok(ForecastSeries { model: "naive_persistence".into(), points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ts(h: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 6, 1, 0, 0, 0).unwrap() + Duration::hours(h)
    }

    fn sample(h: i64, g: f64, p: f64) -> PowerSample {
        PowerSample { timestamp: ts(h), g_poa: g, p }
    }

    fn weather(h: i64, g: f64) -> WeatherPoint {
        WeatherPoint { timestamp: ts(h), g_poa: g, t_module: 25.0 }
    }

    #[test]
    fn ratio_scaling() {
        let hist = [sample(12, 500.0, 100_000.0)];
        let f = smart_persistence(&hist, &[weather(36, 750.0)], Duration::hours(24), 50.0).unwrap();
        assert!((f.points[0].p_pred - 150_000.0).abs() < 1e-9);
        let f = smart_persistence(&hist, &[weather(36, 0.0)], Duration::hours(24), 50.0).unwrap();
        assert_eq!(f.points[0].p_pred, 0.0);
    }

    #[test]
    fn low_irradiance_fallback() {
        let hist = [sample(7, 10.0, 5.0), sample(8, 100.0, 2000.0), sample(9, 20.0, 300.0)];
        let h = Duration::hours(24);
        // Dark now and dark tomorrow.
        assert_eq!(smart_persistence(&hist, &[weather(33, 20.0)], h, 50.0).unwrap().points[0].p_pred, 0.0);
        // Dark now, bright tomorrow: nearest earlier bright sample of the day.
        let f = smart_persistence(&hist, &[weather(33, 200.0)], h, 50.0).unwrap();
        assert!((f.points[0].p_pred - 4000.0).abs() < 1e-9);
        // No earlier bright sample on that day.
        assert_eq!(smart_persistence(&hist, &[weather(31, 200.0)], h, 50.0).unwrap().points[0].p_pred, 0.0);
    }

    #[test]
    fn misaligned_history() {
        let hist = [sample(12, 500.0, 100.0)];
        assert!(matches!(
            smart_persistence(&hist, &[weather(37, 500.0)], Duration::hours(24), 50.0),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn naive_identity_and_shift() {
        let hist: Vec<_> = (0..48).map(|h| sample(h, 0.0, h as f64)).collect();
        let targets: Vec<_> = (0..48).map(ts).collect();
        let f = naive_persistence(&hist, &targets, Duration::zero()).unwrap();
        assert_eq!(f.values(), (0..48).map(|h| h as f64).collect::<Vec<_>>());
        let f = naive_persistence(&hist, &targets[24..], Duration::hours(24)).unwrap();
        assert_eq!(f.values(), (0..24).map(|h| h as f64).collect::<Vec<_>>());
    }
}
