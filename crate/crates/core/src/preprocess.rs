//! Telemetry cleaning ahead of parameter fitting.
//!
//! Filters are applied in a fixed order: night, clipping, regression outliers.
//! Each filter writes only its own flag, so re-running any of them leaves the
//! mask unchanged.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sdm::OperatingConditions;

/// One timestamped sample of weather and DC electrical measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub timestamp: DateTime<Utc>,
    /// Plane-of-array irradiance (W/m²).
    pub g_poa: f64,
    /// Module temperature (°C).
    pub t_module: f64,
    pub v_dc: f64,
    pub i_dc: f64,
}

impl TelemetryRecord {
    pub fn power(&self) -> f64 {
        self.v_dc * self.i_dc
    }

    /// Operating conditions, treating the module temperature as cell temperature.
    pub fn conditions(&self) -> OperatingConditions {
        OperatingConditions { g_poa: self.g_poa, t_cell: self.t_module }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let fields = [self.g_poa, self.t_module, self.v_dc, self.i_dc];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err("non-finite field".into());
        }
        if self.g_poa < 0.0 {
            return Err(format!("negative g_poa {}", self.g_poa));
        }
        if self.v_dc < 0.0 {
            return Err(format!("negative v_dc {}", self.v_dc));
        }
        Ok(())
    }
}

/// Checks record invariants and strict timestamp ordering.
pub fn validate_series(series: &[TelemetryRecord]) -> Result<()> {
    for (k, r) in series.iter().enumerate() {
        r.validate().map_err(|e| Error::Data(format!("record {k}: {e}")))?;
        if k > 0 && r.timestamp <= series[k - 1].timestamp {
            return Err(Error::Data(format!("record {k}: timestamp not strictly increasing")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordFlags {
    pub night: bool,
    pub clipped: bool,
    pub outlier_current: bool,
    pub outlier_voltage: bool,
}

impl RecordFlags {
    pub fn retained(&self) -> bool {
        !(self.night || self.clipped || self.outlier_current || self.outlier_voltage)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityMask {
    pub flags: Vec<RecordFlags>,
}

impl QualityMask {
    pub fn new(len: usize) -> Self {
        Self { flags: vec![RecordFlags::default(); len] }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn retained(&self, k: usize) -> bool {
        self.flags[k].retained()
    }

    pub fn retained_count(&self) -> usize {
        self.flags.iter().filter(|f| f.retained()).count()
    }

    pub fn count(&self, pred: impl Fn(&RecordFlags) -> bool) -> usize {
        self.flags.iter().filter(|f| pred(f)).count()
    }

    /// Copies of the retained records.
    pub fn select(&self, series: &[TelemetryRecord]) -> Vec<TelemetryRecord> {
        series.iter().zip(&self.flags).filter(|(_, f)| f.retained()).map(|(r, _)| *r).collect()
    }

    fn check_len(&self, series: &[TelemetryRecord]) -> Result<()> {
        if self.flags.len() != series.len() {
            return Err(Error::InvalidInput(format!(
                "mask length {} does not match series length {}",
                self.flags.len(),
                series.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Irradiance below which a record counts as night (W/m²).
    pub g_min: f64,
    /// Inverter AC limit (W); plateau detection is used when absent.
    pub p_ac_limit: Option<f64>,
    /// Relative band around the running daily maximum for plateau detection.
    pub clip_band: f64,
    /// Minimum plateau length in samples.
    pub clip_min_run: usize,
    pub k_sigma: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { g_min: 50.0, p_ac_limit: None, clip_band: 0.005, clip_min_run: 3, k_sigma: 3.0 }
    }
}

/// Fraction of the AC limit above which DC power is treated as clipped.
pub const CLIP_LIMIT_FRACTION: f64 = 0.98;

/// Minimum usable record count for the outlier regressions.
pub const MIN_OUTLIER_RECORDS: usize = 10;

pub fn filter_night(series: &[TelemetryRecord], mask: &mut QualityMask, g_min: f64) -> Result<()> {
    if series.is_empty() {
        return Err(Error::InsufficientData("empty series".into()));
    }
    mask.check_len(series)?;
    for (r, f) in series.iter().zip(mask.flags.iter_mut()) {
        f.night = r.g_poa < g_min;
    }
    Ok(())
}

pub fn filter_clipping(
    series: &[TelemetryRecord],
    mask: &mut QualityMask,
    p_ac_limit: Option<f64>,
    band: f64,
    min_run: usize,
) -> Result<()> {
    if series.is_empty() {
        return Err(Error::InsufficientData("empty series".into()));
    }
    mask.check_len(series)?;
    match p_ac_limit {
        Some(limit) => {
            for (r, f) in series.iter().zip(mask.flags.iter_mut()) {
                f.clipped = r.power() >= CLIP_LIMIT_FRACTION * limit;
            }
        }
        None => {
            let clipped = detect_plateaus(series, band, min_run);
            for (c, f) in clipped.into_iter().zip(mask.flags.iter_mut()) {
                f.clipped = c;
            }
        }
    }
    Ok(())
}

/// Flags flat-top runs: at least `min_run` consecutive samples whose power
/// stays within `band` of the running daily maximum while the irradiance over
/// the run moves by more than twice that band. A smooth clear-sky peak moves
/// power and irradiance together and is never flagged.
fn detect_plateaus(series: &[TelemetryRecord], band: f64, min_run: usize) -> Vec<bool> {
    let mut out = vec![false; series.len()];
    let mut start = 0;
    while start < series.len() {
        let day = series[start].timestamp.date_naive();
        let end = series[start..]
            .iter()
            .position(|r| r.timestamp.date_naive() != day)
            .map_or(series.len(), |p| start + p);
        flag_day_plateaus(&series[start..end], band, min_run, &mut out[start..end]);
        start = end;
    }
    out
}

fn flag_day_plateaus(day: &[TelemetryRecord], band: f64, min_run: usize, out: &mut [bool]) {
    let close = |run: &[usize], out: &mut [bool]| {
        if run.len() < min_run.max(1) {
            return;
        }
        let (g_lo, g_hi) = run
            .iter()
            .map(|&k| day[k].g_poa)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), g| (lo.min(g), hi.max(g)));
        if g_hi > 0.0 && (g_hi - g_lo) / g_hi > 2.0 * band {
            for &k in run {
                out[k] = true;
            }
        }
    };

    let mut running_max = 0.0_f64;
    let mut run: Vec<usize> = Vec::new();
    let (mut run_lo, mut run_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (k, r) in day.iter().enumerate() {
        let p = r.power();
        running_max = running_max.max(p);
        let near_max = p > 0.0 && p >= (1.0 - band) * running_max;
        if near_max {
            let lo = run_lo.min(p);
            let hi = run_hi.max(p);
            if !run.is_empty() && hi - lo <= band * hi {
                run.push(k);
                run_lo = lo;
                run_hi = hi;
                continue;
            }
            close(&run, out);
            run.clear();
            run.push(k);
            run_lo = p;
            run_hi = p;
        } else {
            close(&run, out);
            run.clear();
            run_lo = f64::INFINITY;
            run_hi = f64::NEG_INFINITY;
        }
    }
    close(&run, out);
}

/// Ordinary least-squares line `y = intercept + slope * x`.
pub(crate) fn ols_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

fn flag_residuals(x: &[f64], y: &[f64], k_sigma: f64) -> Vec<bool> {
    let (b0, b1) = ols_line(x, y);
    let resid: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - (b0 + b1 * a)).collect();
    let dof = (resid.len() as f64 - 2.0).max(1.0);
    let sd = (resid.iter().map(|r| r * r).sum::<f64>() / dof).sqrt();
    // Residuals at round-off level count as exact collinearity.
    let scale = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if sd <= 1e-12 * scale.max(1e-300) {
        return vec![false; resid.len()];
    }
    resid.iter().map(|r| r.abs() > k_sigma * sd).collect()
}

/// Single-pass regression outlier removal: DC current against irradiance and
/// DC voltage against module temperature. The regressions run over records
/// not flagged as night or clipped; earlier outlier flags are recomputed.
pub fn remove_outliers_regression(series: &[TelemetryRecord], mask: &mut QualityMask, k_sigma: f64) -> Result<()> {
    mask.check_len(series)?;
    let idx: Vec<usize> = (0..series.len()).filter(|&k| !mask.flags[k].night && !mask.flags[k].clipped).collect();
    if idx.len() < MIN_OUTLIER_RECORDS {
        return Err(Error::InsufficientData(format!(
            "{} usable records, outlier regression needs {MIN_OUTLIER_RECORDS}",
            idx.len()
        )));
    }
    let g: Vec<f64> = idx.iter().map(|&k| series[k].g_poa).collect();
    let i: Vec<f64> = idx.iter().map(|&k| series[k].i_dc).collect();
    let t: Vec<f64> = idx.iter().map(|&k| series[k].t_module).collect();
    let v: Vec<f64> = idx.iter().map(|&k| series[k].v_dc).collect();
    let out_i = flag_residuals(&g, &i, k_sigma);
    let out_v = flag_residuals(&t, &v, k_sigma);
    for f in mask.flags.iter_mut() {
        f.outlier_current = false;
        f.outlier_voltage = false;
    }
    for (n, &k) in idx.iter().enumerate() {
        mask.flags[k].outlier_current = out_i[n];
        mask.flags[k].outlier_voltage = out_v[n];
    }
    Ok(())
}

/// Runs the three filters in their fixed order.
pub fn clean(series: &[TelemetryRecord], cfg: &PreprocessConfig) -> Result<QualityMask> {
    let mut mask = QualityMask::new(series.len());
    filter_night(series, &mut mask, cfg.g_min)?;
    filter_clipping(series, &mut mask, cfg.p_ac_limit, cfg.clip_band, cfg.clip_min_run)?;
    remove_outliers_regression(series, &mut mask, cfg.k_sigma)?;
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 6, 1, 0, 0, 0).unwrap()
    }

    fn rec(k: i64, g: f64, t: f64, v: f64, i: f64) -> TelemetryRecord {
        TelemetryRecord { timestamp: t0() + Duration::minutes(15 * k), g_poa: g, t_module: t, v_dc: v, i_dc: i }
    }

    fn linear_series(n: usize) -> Vec<TelemetryRecord> {
        (0..n)
            .map(|k| {
                let g = 100.0 + 9.0 * k as f64;
                let t = 20.0 + 0.3 * k as f64;
                rec(k as i64, g, t, 500.0 - 2.0 * t, 0.008 * g)
            })
            .collect()
    }

    #[test]
    fn night_threshold_is_strict() {
        let s = vec![rec(0, 0.0, 20.0, 0.0, 0.0), rec(1, 50.0, 20.0, 400.0, 0.4), rec(2, 49.9, 20.0, 400.0, 0.4)];
        let mut m = QualityMask::new(3);
        filter_night(&s, &mut m, 50.0).unwrap();
        assert!(m.flags[0].night);
        assert!(!m.flags[1].night);
        assert!(m.flags[2].night);
    }

    #[test]
    fn clipping_with_known_limit() {
        let s = vec![rec(0, 900.0, 40.0, 500.0, 198.0), rec(1, 900.0, 40.0, 500.0, 150.0)];
        let mut m = QualityMask::new(2);
        filter_clipping(&s, &mut m, Some(100_000.0), 0.005, 3).unwrap();
        assert!(m.flags[0].clipped); // 99 kW
        assert!(!m.flags[1].clipped); // 75 kW
    }

    #[test]
    fn smooth_day_has_no_plateau() {
        let s: Vec<_> = (0..96)
            .map(|k| {
                let h = k as f64 / 4.0;
                let g = 1000.0 * (std::f64::consts::PI * (h - 6.0) / 12.0).sin().max(0.0).powf(1.2);
                rec(k, g, 25.0, if g > 0.0 { 400.0 } else { 0.0 }, g * 0.05)
            })
            .collect();
        let mut m = QualityMask::new(s.len());
        filter_clipping(&s, &mut m, None, 0.005, 3).unwrap();
        assert_eq!(m.count(|f| f.clipped), 0);
    }

    #[test]
    fn collinear_data_has_no_outliers() {
        let s = linear_series(40);
        let mut m = QualityMask::new(s.len());
        remove_outliers_regression(&s, &mut m, 0.5).unwrap();
        assert_eq!(m.retained_count(), 40);
    }

    #[test]
    fn single_corrupted_current_is_flagged() {
        let mut s = linear_series(60);
        // Deterministic small jitter so the residual spread is not zero.
        for (k, r) in s.iter_mut().enumerate() {
            r.i_dc *= 1.0 + 0.002 * ((k * 7919 % 13) as f64 - 6.0) / 6.0;
        }
        s[30].i_dc *= 10.0;
        let mut m = QualityMask::new(s.len());
        remove_outliers_regression(&s, &mut m, 3.0).unwrap();
        let flagged: Vec<usize> = (0..s.len()).filter(|&k| !m.retained(k)).collect();
        assert_eq!(flagged, vec![30]);
        assert!(m.flags[30].outlier_current);
    }

    #[test]
    fn gaussian_flag_rate() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 1.0).unwrap();
            let s: Vec<_> = (0..4000)
                .map(|k| {
                    let g = 60.0 + (k % 900) as f64;
                    let t = 15.0 + (k % 37) as f64;
                    rec(k as i64, g, t, 500.0 - 2.0 * t + 3.0 * noise.sample(&mut rng), 0.008 * g + 0.05 * noise.sample(&mut rng))
                })
                .collect();
            let mut m = QualityMask::new(s.len());
            remove_outliers_regression(&s, &mut m, 3.0).unwrap();
            let frac = 1.0 - m.retained_count() as f64 / s.len() as f64;
            assert!((0.001..=0.015).contains(&frac), "seed {seed}: {frac}");
        }
    }

    #[test]
    fn too_few_records() {
        let s = linear_series(8);
        let mut m = QualityMask::new(s.len());
        assert!(matches!(remove_outliers_regression(&s, &mut m, 3.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn filters_are_idempotent() {
        let mut s = linear_series(50);
        s[10].i_dc *= 5.0;
        s[3].g_poa = 10.0;
        let cfg = PreprocessConfig::default();
        let once = clean(&s, &cfg).unwrap();
        let mut twice = once.clone();
        filter_night(&s, &mut twice, cfg.g_min).unwrap();
        filter_clipping(&s, &mut twice, cfg.p_ac_limit, cfg.clip_band, cfg.clip_min_run).unwrap();
        remove_outliers_regression(&s, &mut twice, cfg.k_sigma).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn series_validation() {
        let mut s = linear_series(3);
        assert!(validate_series(&s).is_ok());
        s[2].timestamp = s[1].timestamp;
        assert!(validate_series(&s).is_err());
    }
}
