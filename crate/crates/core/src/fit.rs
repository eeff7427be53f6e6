//! Single-diode parameter estimation from production telemetry.
//!
//! The five reference parameters are chosen to minimise the mean normalised
//! squared error between measured and simulated array MPP voltage and current
//! over a window of cleaned telemetry. Fitting runs periodically over a
//! trailing window, warm-started from the previous window.

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::baselines::datasheet::{fit_desoto_from_datasheet, Datasheet};
use crate::error::{Error, Result};
use crate::forecast::{ForecastPoint, ForecastSeries, WeatherPoint};
use crate::optim::{minimize, LbfgsbOptions};
use crate::preprocess::{clean, PreprocessConfig, TelemetryRecord};
use crate::sdm::{
    array_power, modified_ideality, simulate_array_mpp, ArrayTopology, OperatingConditions, SdmParamsRef,
    KELVIN_OFFSET, T_REF_C,
};

pub const MIN_FIT_RECORDS: usize = 50;
/// Largest fraction of records allowed to fail simulation in one loss call.
pub const MAX_SKIPPED_FRACTION: f64 = 0.10;

/// Closed intervals per parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitBounds {
    pub i_ph_ref: (f64, f64),
    pub i_0_ref: (f64, f64),
    pub r_s: (f64, f64),
    pub r_sh_ref: (f64, f64),
    pub n_diode: (f64, f64),
}

impl FitBounds {
    /// Default box for a module with short-circuit current `i_sc`.
    pub fn for_isc(i_sc: f64) -> Self {
        Self {
            i_ph_ref: (0.1 * i_sc, 2.0 * i_sc),
            i_0_ref: (1e-13, 1e-5),
            r_s: (1e-4, 5.0),
            r_sh_ref: (10.0, 1e5),
            n_diode: (0.5, 2.5),
        }
    }

    pub fn as_pairs(&self) -> [(f64, f64); 5] {
        [self.i_ph_ref, self.i_0_ref, self.r_s, self.r_sh_ref, self.n_diode]
    }

    pub fn contains(&self, p: &SdmParamsRef) -> bool {
        p.to_array().iter().zip(self.as_pairs()).all(|(v, (lo, hi))| *v >= lo && *v <= hi)
    }

    pub fn clamp(&self, p: &SdmParamsRef) -> SdmParamsRef {
        let mut a = p.to_array();
        for (v, (lo, hi)) in a.iter_mut().zip(self.as_pairs()) {
            *v = v.clamp(lo, hi);
        }
        SdmParamsRef::from_array(a)
    }

    pub fn validate(&self) -> Result<()> {
        for (lo, hi) in self.as_pairs() {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
                return Err(Error::Config(format!("invalid bound [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub bounds: FitBounds,
    pub max_iterations: usize,
    pub loss_tolerance: f64,
    /// Voltage normaliser (V).
    pub v_scale: f64,
    /// Current normaliser (A).
    pub i_scale: f64,
    /// Which parameters are optimised in log10 space, in the order of
    /// [`SdmParamsRef::to_array`].
    pub log_space: [bool; 5],
}

impl FitOptions {
    /// Defaults derived from nameplate values: scales are the array MPP voltage
    /// and current.
    pub fn from_datasheet(ds: &Datasheet, topo: &ArrayTopology) -> Self {
        Self {
            bounds: FitBounds::for_isc(ds.i_sc),
            max_iterations: 200,
            loss_tolerance: 1e-10,
            v_scale: ds.v_mp * f64::from(topo.modules_per_string),
            i_scale: ds.i_mp * f64::from(topo.strings_in_parallel),
            log_space: [false, true, false, true, false],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if !(self.v_scale > 0.0 && self.i_scale > 0.0) {
            return Err(Error::Config("v_scale and i_scale must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        Ok(())
    }

    /// Maps parameters into the unit box of the optimiser.
    pub fn to_unit(&self, p: &SdmParamsRef) -> [f64; 5] {
        let mut z = [0.0; 5];
        for (j, (v, (lo, hi))) in p.to_array().iter().zip(self.bounds.as_pairs()).enumerate() {
            z[j] = if self.log_space[j] {
                (v.log10() - lo.log10()) / (hi.log10() - lo.log10())
            } else {
                (v - lo) / (hi - lo)
            };
        }
        z
    }

    pub fn from_unit(&self, z: &[f64]) -> SdmParamsRef {
        let mut a = [0.0; 5];
        for (j, (lo, hi)) in self.bounds.as_pairs().into_iter().enumerate() {
            a[j] = if self.log_space[j] {
                10f64.powf(lo.log10() + z[j] * (hi.log10() - lo.log10()))
            } else {
                lo + z[j] * (hi - lo)
            };
        }
        SdmParamsRef::from_array(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitWindowResult {
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub params: SdmParamsRef,
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n_points: usize,
}

/// Initial parameters from the datasheet: the five-condition extraction, or
/// closed-form heuristics when that does not converge.
pub fn initial_guess(ds: &Datasheet) -> Result<SdmParamsRef> {
    ds.validate().map_err(|e| Error::Config(e.to_string()))?;
    if let Ok(p) = fit_desoto_from_datasheet(ds) {
        return Ok(p);
    }
    heuristic_guess(ds)
}

/// Closed-form seeds used when the datasheet extraction fails.
pub fn heuristic_guess(ds: &Datasheet) -> Result<SdmParamsRef> {
    let cells = ds.cells_in_series;
    let n_diode = 1.1;
    let a = modified_ideality(n_diode, cells, T_REF_C + KELVIN_OFFSET);
    let r_s = 0.5 * (ds.v_oc - ds.v_mp) / ds.i_mp;
    let r_sh_ref = 10.0 * ds.v_mp / ds.i_mp * f64::from(cells);
    let i_0_ref = ((ds.i_sc - ds.v_oc / r_sh_ref) / ((ds.v_oc / a).exp() - 1.0)).max(1e-13);
    let p = SdmParamsRef { i_ph_ref: ds.i_sc, i_0_ref, r_s, r_sh_ref, n_diode };
    let p = FitBounds::for_isc(ds.i_sc).clamp(&p);
    p.validate()?;
    Ok(p)
}

/// Mean normalised squared residual between measured and simulated array MPP.
pub fn loss(params: &SdmParamsRef, window: &[TelemetryRecord], topo: &ArrayTopology, opts: &FitOptions) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::InsufficientData("empty fitting window".into()));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for r in window {
        match simulate_array_mpp(params, topo, &r.conditions()) {
            Ok((v, i)) => {
                let dv = (r.v_dc - v) / opts.v_scale;
                let di = (r.i_dc - i) / opts.i_scale;
                sum += dv * dv + di * di;
                used += 1;
            }
            Err(_) => continue,
        }
    }
    let skipped = window.len() - used;
    if skipped as f64 > MAX_SKIPPED_FRACTION * window.len() as f64 || used == 0 {
        return Err(Error::FitDegenerate { skipped, total: window.len() });
    }
    Ok(sum / used as f64)
}

/// Loss as a function of the optimiser's unit-box coordinates.
pub fn unit_loss(z: &[f64], window: &[TelemetryRecord], topo: &ArrayTopology, opts: &FitOptions) -> f64 {
    let p = opts.from_unit(z);
    loss(&p, window, topo, opts).unwrap_or(f64::INFINITY)
}

/// Fits the five parameters on one window of retained records.
pub fn fit_window(
    window: &[TelemetryRecord],
    topo: &ArrayTopology,
    init: &SdmParamsRef,
    opts: &FitOptions,
) -> Result<FitWindowResult> {
    opts.validate()?;
    if window.len() < MIN_FIT_RECORDS {
        return Err(Error::InsufficientData(format!(
            "{} records in window, fitting needs {MIN_FIT_RECORDS}",
            window.len()
        )));
    }
    let (first, last) = (window[0].timestamp, window[window.len() - 1].timestamp);
    if last - first < Duration::hours(12) {
        return Err(Error::InsufficientData("fitting window spans less than one daylight period".into()));
    }
    let init = opts.bounds.clamp(init);
    let z0 = opts.to_unit(&init);
    if !unit_loss(&z0, window, topo, opts).is_finite() {
        return Err(Error::Initialization(format!("loss not finite at initial guess {init:?}")));
    }
    let lbfgs = LbfgsbOptions {
        max_iterations: opts.max_iterations,
        rel_tolerance: opts.loss_tolerance,
        ..Default::default()
    };
    let m = minimize(|z| unit_loss(z, window, topo, opts), &z0, &[0.0; 5], &[1.0; 5], &lbfgs);
    let mut params = opts.from_unit(&m.x);
    // Round-off in the log transform must not push a value past its bound.
    params = opts.bounds.clamp(&params);
    Ok(FitWindowResult {
        window_start: first,
        window_end: last,
        params,
        final_loss: m.f,
        iterations: m.iterations,
        converged: m.converged,
        n_points: window.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollingSchedule {
    pub window_length: Duration,
    pub update_period: Duration,
}

impl Default for RollingSchedule {
    fn default() -> Self {
        Self { window_length: Duration::days(3), update_period: Duration::days(1) }
    }
}

/// Outcome of one scheduled window; failures carry the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingEntry {
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub outcome: std::result::Result<FitWindowResult, Error>,
}

/// End of a series: last timestamp plus the smallest sample spacing.
pub fn series_end(series: &[TelemetryRecord]) -> Option<DateTime<Utc>> {
    let last = series.last()?.timestamp;
    let step = series.windows(2).map(|w| w[1].timestamp - w[0].timestamp).min().unwrap_or_else(Duration::zero);
    Some(last + step)
}

/// Update instants `start + window_length + k*update_period` up to the end of the series.
pub fn update_instants(series: &[TelemetryRecord], schedule: &RollingSchedule) -> Vec<DateTime<Utc>> {
    let (Some(first), Some(end)) = (series.first(), series_end(series)) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    if schedule.update_period <= Duration::zero() {
        return out;
    }
    let mut t = first.timestamp + schedule.window_length;
    while t <= end {
        out.push(t);
        t += schedule.update_period;
    }
    out
}

/// Records with `start <= timestamp < end`.
pub fn slice_window(series: &[TelemetryRecord], start: DateTime<Utc>, end: DateTime<Utc>) -> &[TelemetryRecord] {
    let a = series.partition_point(|r| r.timestamp < start);
    let b = series.partition_point(|r| r.timestamp < end);
    &series[a..b]
}

/// Cleans a window and returns its retained records.
pub fn prepare_window(window: &[TelemetryRecord], pre: &PreprocessConfig) -> Result<Vec<TelemetryRecord>> {
    if window.is_empty() {
        return Err(Error::InsufficientData("empty window".into()));
    }
    let mask = clean(window, pre)?;
    Ok(mask.select(window))
}

/// Periodic re-fitting over the trailing `window_length` of data.
pub fn rolling_fit(
    series: &[TelemetryRecord],
    topo: &ArrayTopology,
    schedule: &RollingSchedule,
    init: &SdmParamsRef,
    opts: &FitOptions,
    pre: &PreprocessConfig,
) -> Result<Vec<RollingEntry>> {
    let (Some(first), Some(end)) = (series.first(), series_end(series)) else {
        return Err(Error::InsufficientData("empty series".into()));
    };
    if end - first.timestamp < schedule.window_length {
        return Err(Error::InsufficientData("series shorter than the fitting window".into()));
    }
    let mut warm = *init;
    let mut out = Vec::new();
    for t in update_instants(series, schedule) {
        let start = t - schedule.window_length;
        let outcome = prepare_window(slice_window(series, start, t), pre)
            .and_then(|w| fit_window(&w, topo, &warm, opts))
            .map(|mut r| {
                r.window_start = start;
                r.window_end = t;
                r
            });
        if let Ok(r) = &outcome {
            warm = r.params;
        }
        out.push(RollingEntry { window_start: start, window_end: t, outcome });
    }
    Ok(out)
}

/// Array power for each weather point; irradiance below `g_min` gives zero.
pub fn predict_power_with_params(
    params: &SdmParamsRef,
    weather: &[WeatherPoint],
    topo: &ArrayTopology,
    g_min: f64,
    model: &str,
) -> Result<ForecastSeries> {
    let mut points = Vec::with_capacity(weather.len());
    for w in weather {
        let p = if w.g_poa < g_min {
            0.0
        } else {
            array_power(params, topo, &OperatingConditions { g_poa: w.g_poa, t_cell: w.t_module })?
        };
        points.push(ForecastPoint { timestamp: w.timestamp, p_pred: p });
    }
    Ok(ForecastSeries { model: model.to_string(), points })
}

/// Power forecast from a converged window fit.
pub fn predict_power(
    result: &FitWindowResult,
    weather: &[WeatherPoint],
    topo: &ArrayTopology,
    g_min: f64,
) -> Result<ForecastSeries> {
    if !result.converged {
        return Err(Error::InvalidInput("fit did not converge".into()));
    }
    predict_power_with_params(&result.params, weather, topo, g_min, "pvpro")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::datasheet::datasheet_from_params;
    use crate::synth::{generate_dataset, DegradationScenario, WeatherProfile};

    fn truth() -> SdmParamsRef {
        SdmParamsRef::new(9.5, 5e-10, 0.35, 400.0, 1.1).unwrap()
    }

    fn topo() -> ArrayTopology {
        ArrayTopology::new(72, 12, 8).unwrap()
    }

    fn opts() -> FitOptions {
        let ds = datasheet_from_params(&truth(), 72, 0.0).unwrap();
        FitOptions::from_datasheet(&ds, &topo())
    }

    fn window(noise: f64, seed: u64) -> Vec<TelemetryRecord> {
        let profile = WeatherProfile { days: 3, seed, ..Default::default() };
        let ds = generate_dataset(&truth(), &topo(), &profile, &DegradationScenario::constant(), noise, noise).unwrap();
        ds.records.into_iter().filter(|r| r.g_poa >= 50.0).collect()
    }

    #[test]
    fn unit_transform_round_trips() {
        let o = opts();
        let p = truth();
        let back = o.from_unit(&o.to_unit(&p));
        for (a, b) in back.to_array().iter().zip(p.to_array()) {
            assert!((a - b).abs() / b < 1e-12);
        }
    }

    #[test]
    fn loss_is_zero_at_truth() {
        let w = window(0.0, 1);
        assert!(loss(&truth(), &w, &topo(), &opts()).unwrap() < 1e-12);
        let mut off = truth();
        off.i_ph_ref *= 1.05;
        assert!(loss(&off, &w, &topo(), &opts()).unwrap() > loss(&truth(), &w, &topo(), &opts()).unwrap());
    }

    #[test]
    fn fit_from_truth_stays_put() {
        let w = window(0.0, 1);
        let r = fit_window(&w, &topo(), &truth(), &opts()).unwrap();
        assert!(r.converged);
        for (a, b) in r.params.to_array().iter().zip(truth().to_array()) {
            assert!((a - b).abs() / b < 1e-6, "{:?}", r.params);
        }
    }

    #[test]
    fn fit_recovers_from_perturbed_start() {
        let w = window(0.0, 1);
        let mut init = truth();
        init.i_ph_ref *= 0.9;
        init.r_s *= 1.3;
        let r = fit_window(&w, &topo(), &init, &opts()).unwrap();
        for (a, b) in r.params.to_array().iter().zip(truth().to_array()) {
            assert!((a - b).abs() / b < 0.01, "{:?} loss {}", r.params, r.final_loss);
        }
        assert!(opts().bounds.contains(&r.params));
    }

    #[test]
    fn too_few_records() {
        let w = window(0.0, 1);
        assert!(matches!(fit_window(&w[..20], &topo(), &truth(), &opts()), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn heuristic_guess_is_inside_bounds() {
        let ds = datasheet_from_params(&truth(), 72, 0.0).unwrap();
        let g = heuristic_guess(&ds).unwrap();
        assert!(FitBounds::for_isc(ds.i_sc).contains(&g));
    }

    #[test]
    fn dark_weather_predicts_zero() {
        let w: Vec<_> = window(0.0, 1)
            .iter()
            .map(|r| WeatherPoint { timestamp: r.timestamp, g_poa: 0.0, t_module: r.t_module })
            .collect();
        let f = predict_power_with_params(&truth(), &w, &topo(), 50.0, "pvpro").unwrap();
        assert!(f.points.iter().all(|p| p.p_pred == 0.0));
    }
}
