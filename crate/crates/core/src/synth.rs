//! Ground-truth telemetry generator.
//!
//! Produces clear-sky irradiance, optional cloud transients, module
//! temperature and MPP-tracked DC telemetry from known single-diode
//! parameters. Everything is a pure function of the inputs and the seed;
//! per-day random streams are derived from the master seed so days can be
//! generated independently.

use chrono::{DateTime, Duration, NaiveDate, TimeZone, Timelike, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::FitBounds;
use crate::preprocess::TelemetryRecord;
use crate::sdm::{simulate_array_mpp, ArrayTopology, OperatingConditions, SdmParamsRef};

/// Solar noon of the synthetic sun, hours after UTC midnight.
pub const SOLAR_NOON_H: f64 = 12.0;
pub const CLEAR_SKY_EXPONENT: f64 = 1.2;
/// Module temperature rise at 800 W/m² (°C).
pub const NOCT_RISE: f64 = 28.0;
pub const AMBIENT_SWING: f64 = 5.0;
/// Hours after solar noon at which ambient temperature peaks.
pub const AMBIENT_PEAK_LAG_H: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeatherProfile {
    pub start: DateTime<Utc>,
    pub days: usize,
    pub cadence_minutes: u32,
    pub peak_irradiance: f64,
    pub day_length_hours: f64,
    pub cloud_days: Vec<usize>,
    pub cloud_depth: f64,
    pub cloud_timescale_minutes: f64,
    pub ambient_base: f64,
    pub seed: u64,
}

impl Default for WeatherProfile {
    fn default() -> Self {
        Self {
            start: Utc.with_ymd_and_hms(2024, 6, 1, 0, 0, 0).unwrap(),
            days: 3,
            cadence_minutes: 15,
            peak_irradiance: 1000.0,
            day_length_hours: 12.0,
            cloud_days: Vec::new(),
            cloud_depth: 0.4,
            cloud_timescale_minutes: 30.0,
            ambient_base: 20.0,
            seed: 0,
        }
    }
}

impl WeatherProfile {
    pub fn validate(&self) -> Result<()> {
        if self.days == 0 {
            return Err(Error::Generation("profile needs at least one day".into()));
        }
        if self.cadence_minutes == 0 || 1440 % self.cadence_minutes != 0 {
            return Err(Error::Generation(format!("cadence {} min does not divide 24 h", self.cadence_minutes)));
        }
        if !(0.0..=1.0).contains(&self.cloud_depth) {
            return Err(Error::Generation(format!("cloud_depth {} outside [0, 1]", self.cloud_depth)));
        }
        if !(self.day_length_hours > 0.0 && self.day_length_hours < 24.0) {
            return Err(Error::Generation("day length must be in (0, 24) h".into()));
        }
        if self.cloud_timescale_minutes <= 0.0 || self.peak_irradiance < 0.0 {
            return Err(Error::Generation("cloud timescale and peak irradiance must be positive".into()));
        }
        if let Some(d) = self.cloud_days.iter().find(|&&d| d >= self.days) {
            return Err(Error::Generation(format!("cloud day {d} beyond profile span")));
        }
        Ok(())
    }

    pub fn samples_per_day(&self) -> usize {
        (1440 / self.cadence_minutes) as usize
    }

    pub fn timestamps(&self) -> Vec<DateTime<Utc>> {
        let n = self.days * self.samples_per_day();
        (0..n).map(|k| self.start + Duration::minutes(i64::from(self.cadence_minutes) * k as i64)).collect()
    }

    pub fn sunrise_h(&self) -> f64 {
        SOLAR_NOON_H - self.day_length_hours / 2.0
    }
}

fn hour_of_day(ts: &DateTime<Utc>) -> f64 {
    f64::from(ts.num_seconds_from_midnight()) / 3600.0
}

/// Closed-form clear-sky irradiance at a given hour of the day.
pub fn clear_sky_at(profile: &WeatherProfile, hour: f64) -> f64 {
    let phase = std::f64::consts::PI * (hour - profile.sunrise_h()) / profile.day_length_hours;
    if !(0.0..=std::f64::consts::PI).contains(&phase) {
        return 0.0;
    }
    profile.peak_irradiance * phase.sin().max(0.0).powf(CLEAR_SKY_EXPONENT)
}

pub fn clear_sky_profile(profile: &WeatherProfile) -> Result<Vec<f64>> {
    profile.validate()?;
    Ok(profile.timestamps().iter().map(|t| clear_sky_at(profile, hour_of_day(t))).collect())
}

/// splitmix64 step, used to derive independent per-day seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_CLOUDS: u64 = 0x636c_6f75_6473;
const STREAM_NOISE: u64 = 0x006e_6f69_7365;

fn day_rng(seed: u64, stream: u64, day: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(stream ^ day as u64)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkyLabel {
    Clear,
    Cloudy,
}

/// Smoothed attenuation in `[1 - depth, 1]` from an AR(1) latent process.
pub fn cloud_attenuation(profile: &WeatherProfile, day: usize) -> Vec<f64> {
    let n = profile.samples_per_day();
    let mut rng = day_rng(profile.seed, STREAM_CLOUDS, day);
    let rho = (-f64::from(profile.cadence_minutes) / profile.cloud_timescale_minutes).exp();
    let innov = (1.0 - rho * rho).sqrt();
    let mut u: f64 = StandardNormal.sample(&mut rng);
    (0..n)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            u = rho * u + innov * e;
            1.0 - profile.cloud_depth * 0.5 * (1.0 + (1.5 * u).tanh())
        })
        .collect()
}

/// Multiplies cloud days by their attenuation. Returns the attenuated series
/// and one label per day.
pub fn apply_clouds(series: &[f64], profile: &WeatherProfile) -> Result<(Vec<f64>, Vec<SkyLabel>)> {
    profile.validate()?;
    let spd = profile.samples_per_day();
    if series.len() != profile.days * spd {
        return Err(Error::Generation("series length does not match profile".into()));
    }
    let mut out = series.to_vec();
    let mut labels = vec![SkyLabel::Clear; profile.days];
    for &d in &profile.cloud_days {
        if profile.cloud_depth == 0.0 {
            continue;
        }
        labels[d] = SkyLabel::Cloudy;
        let att = cloud_attenuation(profile, d);
        for (x, a) in out[d * spd..(d + 1) * spd].iter_mut().zip(att) {
            *x *= a;
        }
    }
    Ok((out, labels))
}

pub fn ambient_temperature(ambient_base: f64, hour: f64) -> f64 {
    let peak = SOLAR_NOON_H + AMBIENT_PEAK_LAG_H;
    ambient_base + AMBIENT_SWING * (2.0 * std::f64::consts::PI * (hour - peak) / 24.0).cos()
}

pub fn module_temperature_at(g: f64, ambient_base: f64, hour: f64) -> f64 {
    ambient_temperature(ambient_base, hour) + g / 800.0 * NOCT_RISE
}

pub fn module_temperature(irradiance: &[f64], timestamps: &[DateTime<Utc>], ambient_base: f64) -> Vec<f64> {
    irradiance
        .iter()
        .zip(timestamps)
        .map(|(g, t)| module_temperature_at(*g, ambient_base, hour_of_day(t)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    #[default]
    Constant,
    /// Relative change accumulated linearly over the whole span.
    Linear { total_relative_change: f64 },
    /// Relative change applied from the start of `day` onwards.
    Step { day: usize, relative_change: f64 },
}

impl Trajectory {
    fn factor(&self, elapsed_days: f64, span_days: f64) -> f64 {
        match *self {
            Trajectory::Constant => 1.0,
            Trajectory::Linear { total_relative_change } => 1.0 + total_relative_change * elapsed_days / span_days,
            Trajectory::Step { day, relative_change } => {
                if elapsed_days >= day as f64 {
                    1.0 + relative_change
                } else {
                    1.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationScenario {
    pub i_ph_ref: Trajectory,
    pub i_0_ref: Trajectory,
    pub r_s: Trajectory,
    pub r_sh_ref: Trajectory,
    pub n_diode: Trajectory,
}

impl DegradationScenario {
    pub fn constant() -> Self {
        Self::default()
    }

    pub fn params_at(&self, base: &SdmParamsRef, elapsed_days: f64, span_days: f64) -> SdmParamsRef {
        let traj = [self.i_ph_ref, self.i_0_ref, self.r_s, self.r_sh_ref, self.n_diode];
        let mut a = base.to_array();
        for (x, t) in a.iter_mut().zip(traj) {
            *x *= t.factor(elapsed_days, span_days);
        }
        SdmParamsRef::from_array(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayTruth {
    pub day: usize,
    pub date: NaiveDate,
    /// Parameters at the start of the day.
    pub params: SdmParamsRef,
    pub label: SkyLabel,
}

/// Everything needed to recompute the injected quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLog {
    pub base_params: SdmParamsRef,
    pub topology: ArrayTopology,
    pub profile: WeatherProfile,
    pub scenario: DegradationScenario,
    pub noise_v: f64,
    pub noise_i: f64,
    pub days: Vec<DayTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub records: Vec<TelemetryRecord>,
    pub truth: GroundTruthLog,
}

pub const DEFAULT_NOISE: f64 = 0.005;

pub fn generate_dataset(
    true_params: &SdmParamsRef,
    topo: &ArrayTopology,
    profile: &WeatherProfile,
    scenario: &DegradationScenario,
    noise_v: f64,
    noise_i: f64,
) -> Result<SyntheticDataset> {
    true_params.validate()?;
    topo.validate()?;
    profile.validate()?;
    if !(noise_v >= 0.0 && noise_i >= 0.0) {
        return Err(Error::Generation("noise levels must be non-negative".into()));
    }
    let bounds = FitBounds::for_isc(true_params.i_ph_ref);
    let span = profile.days as f64;
    let timestamps = profile.timestamps();
    let clear = clear_sky_profile(profile)?;
    let (irr, labels) = apply_clouds(&clear, profile)?;
    let spd = profile.samples_per_day();
    let minutes_per_sample = f64::from(profile.cadence_minutes);

    let mut records = Vec::with_capacity(timestamps.len());
    let mut days = Vec::with_capacity(profile.days);
    for day in 0..profile.days {
        let day_params = scenario.params_at(true_params, day as f64, span);
        days.push(DayTruth { day, date: timestamps[day * spd].date_naive(), params: day_params, label: labels[day] });
        let mut rng = day_rng(profile.seed, STREAM_NOISE, day);
        for k in day * spd..(day + 1) * spd {
            let elapsed = k as f64 * minutes_per_sample / 1440.0;
            let params = scenario.params_at(true_params, elapsed, span);
            if !bounds.contains(&params) || params.validate().is_err() {
                return Err(Error::Generation(format!("trajectory leaves fitting bounds at day {elapsed:.2}")));
            }
            let hour = hour_of_day(&timestamps[k]);
            let g = irr[k];
            let t_m = module_temperature_at(g, profile.ambient_base, hour);
            let (v, i) = simulate_array_mpp(&params, topo, &OperatingConditions { g_poa: g, t_cell: t_m })?;
            let ev: f64 = StandardNormal.sample(&mut rng);
            let ei: f64 = StandardNormal.sample(&mut rng);
            records.push(TelemetryRecord {
                timestamp: timestamps[k],
                g_poa: g,
                t_module: t_m,
                v_dc: (v * (1.0 + noise_v * ev)).max(0.0),
                i_dc: i * (1.0 + noise_i * ei),
            });
        }
    }
    let truth = GroundTruthLog {
        base_params: *true_params,
        topology: *topo,
        profile: profile.clone(),
        scenario: *scenario,
        noise_v,
        noise_i,
        days,
    };
    Ok(SyntheticDataset { records, truth })
}

/// Caps DC power at `limit` by reducing current, mimicking inverter clipping.
/// Returns the indices of the modified records.
pub fn inject_clipping(records: &mut [TelemetryRecord], limit: f64) -> Vec<usize> {
    let mut hit = Vec::new();
    for (k, r) in records.iter_mut().enumerate() {
        let p = r.power();
        if p > limit && r.v_dc > 0.0 {
            r.i_dc = limit / r.v_dc;
            hit.push(k);
        }
    }
    hit
}
