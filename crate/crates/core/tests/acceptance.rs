//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration as StdDuration, Instant};

use chrono::Duration;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pvprof_core::analysis::studies::training_length_sweep;
use pvprof_core::analysis::{compute_metrics, exceedance_density, MetricsReport};
use pvprof_core::baselines::datasheet::{datasheet_from_params, fit_desoto_from_datasheet};
use pvprof_core::baselines::persistence::{smart_persistence, PowerSample};
use pvprof_core::benchmark::{load_dataset, run_benchmark, run_day_ahead, BenchmarkReport, Dataset, StudyOutcome};
use pvprof_core::config::RunConfig;
use pvprof_core::fit::{fit_window, rolling_fit, FitOptions, RollingSchedule};
use pvprof_core::forecast::WeatherPoint;
use pvprof_core::models::ModelKind;
use pvprof_core::preprocess::{PreprocessConfig, TelemetryRecord};
use pvprof_core::sdm::{
    find_mpp, open_circuit_voltage, short_circuit_current, solve_current, solve_voltage, translate_to_operating,
    ArrayTopology, OperatingConditions, SdmParamsOperating, SdmParamsRef,
};
use pvprof_core::synth::{generate_dataset, DegradationScenario, Trajectory, WeatherProfile, DEFAULT_NOISE};

const G_MIN: f64 = 50.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Reports collected from every benchmark run in the suite.
#[derive(Default)]
struct Collected {
    reports: Vec<MetricsReport>,
}

impl Collected {
    fn add_benchmark(&mut self, r: &BenchmarkReport) {
        for days in r.daily.values() {
            self.reports.extend(days.iter().filter_map(|d| d.metrics.clone()));
        }
        self.reports.extend(r.aggregate.values().flatten().cloned());
    }
}

fn truth() -> SdmParamsRef {
    SdmParamsRef::new(9.5, 5e-10, 0.35, 400.0, 1.1).unwrap()
}

fn topo() -> ArrayTopology {
    ArrayTopology::new(72, 12, 8).unwrap()
}

fn fit_options() -> FitOptions {
    let ds = datasheet_from_params(&truth(), 72, 0.0).unwrap();
    FitOptions::from_datasheet(&ds, &topo())
}

/// Datasheet-derived start with i_ph lowered 10% and r_s raised 30%.
fn perturbed_init() -> SdmParamsRef {
    let mut p = fit_desoto_from_datasheet(&datasheet_from_params(&truth(), 72, 0.0).unwrap()).unwrap();
    p.i_ph_ref *= 0.9;
    p.r_s *= 1.3;
    p
}

fn window(seed: u64, noise: f64) -> Vec<TelemetryRecord> {
    let profile = WeatherProfile { days: 3, seed, ..Default::default() };
    let d = generate_dataset(&truth(), &topo(), &profile, &DegradationScenario::constant(), noise, noise).unwrap();
    d.records.into_iter().filter(|r| r.g_poa >= G_MIN).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn config(name: &str) -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    RunConfig::from_file(&path).unwrap()
}

/// Terminal current at diode voltage `x`, written out independently of the library.
fn explicit_current(op: &SdmParamsOperating, x: f64) -> f64 {
    op.i_ph - op.i_0 * ((x / op.a_mod).exp() - 1.0) - x / op.r_sh
}

/// Maximum power over a uniform grid of diode voltages on [0, x_oc].
fn grid_mpp(op: &SdmParamsOperating, points: usize) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    while explicit_current(op, hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if explicit_current(op, m) > 0.0 {
            lo = m;
        } else {
            hi = m;
        }
    }
    let mut best = 0.0f64;
    for k in 0..points {
        let x = lo * k as f64 / (points - 1) as f64;
        let i = explicit_current(op, x);
        let v = x - i * op.r_s;
        if v >= 0.0 && i >= 0.0 {
            best = best.max(v * i);
        }
    }
    best
}

fn c1_solver_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut max_res = 0.0f64;
    let mut max_mpp = 0.0f64;
    let mut solver_time = StdDuration::ZERO;
    for _ in 0..1000 {
        let p = SdmParamsRef::new(
            rng.random_range(2.0..15.0),
            10f64.powf(rng.random_range(-12.0..-6.0)),
            rng.random_range(0.01..1.5),
            rng.random_range(50.0..1e4),
            rng.random_range(0.8..2.0),
        )
        .unwrap();
        let cells = [36, 60, 72, 96][rng.random_range(0..4)];
        let c = OperatingConditions::new(rng.random_range(50.0..1200.0), rng.random_range(-10.0..75.0)).unwrap();
        let op = translate_to_operating(&p, &c, cells);

        let t = Instant::now();
        let voc = open_circuit_voltage(&op).unwrap();
        let isc = short_circuit_current(&op).unwrap();
        let mut pairs = Vec::with_capacity(50);
        for k in 0..25 {
            let v = voc * f64::from(k) / 24.0;
            pairs.push((v, solve_current(v, &op).unwrap()));
            let i = isc * f64::from(k) / 24.0;
            pairs.push((solve_voltage(i, &op).unwrap(), i));
        }
        let mpp = find_mpp(&op).unwrap();
        solver_time += t.elapsed();

        for (v, i) in pairs {
            max_res = max_res.max(op.residual(v, i).abs());
        }
        let oracle = grid_mpp(&op, 1_000_000);
        max_mpp = max_mpp.max(rel(mpp.p, oracle));
    }
    let secs = solver_time.as_secs_f64();
    verdict(
        max_res < 1e-9 && max_mpp < 1e-6 && secs < 30.0,
        format!("max residual {max_res:.2e} A, max MPP deviation {max_mpp:.2e}, solver time {secs:.2} s"),
    )
}

fn c2_noiseless_recovery() -> Verdict {
    let mut worst = 0.0f64;
    let mut worst_loss = 0.0f64;
    let mut slowest = 0.0f64;
    for seed in 0..3 {
        let w = window(seed, 0.0);
        let t = Instant::now();
        let r = fit_window(&w, &topo(), &perturbed_init(), &fit_options()).unwrap();
        slowest = slowest.max(t.elapsed().as_secs_f64());
        for (a, b) in r.params.to_array().iter().zip(truth().to_array()) {
            worst = worst.max(rel(*a, b));
        }
        worst_loss = worst_loss.max(r.final_loss);
    }
    verdict(
        worst < 0.01 && worst_loss < 1e-10 && slowest < 2.0,
        format!("worst parameter error {:.4}%, worst loss {worst_loss:.2e}, slowest fit {slowest:.3} s", 100.0 * worst),
    )
}

fn c3_noisy_recovery() -> Verdict {
    let (mut e_iph, mut e_rs, mut e_n, mut decades, mut e_voc) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let voc_truth = open_circuit_voltage(&translate_to_operating(&truth(), &OperatingConditions::stc(), 72)).unwrap();
    for seed in 0..10 {
        let r = fit_window(&window(seed, DEFAULT_NOISE), &topo(), &perturbed_init(), &fit_options()).unwrap();
        let p = r.params;
        let t = truth();
        e_iph.push(rel(p.i_ph_ref, t.i_ph_ref));
        e_rs.push(rel(p.r_s, t.r_s));
        e_n.push(rel(p.n_diode, t.n_diode));
        decades.push((p.i_0_ref / t.i_0_ref).log10().abs());
        let voc = open_circuit_voltage(&translate_to_operating(&p, &OperatingConditions::stc(), 72)).unwrap();
        e_voc.push(rel(voc, voc_truth));
    }
    let worst_voc = e_voc.iter().copied().fold(0.0, f64::max);
    let worst_decades = decades.iter().copied().fold(0.0, f64::max);
    let (m_iph, m_rs, m_n, m_dec, m_voc) = (median(e_iph), median(e_rs), median(e_n), median(decades), median(e_voc));
    verdict(
        m_iph <= 0.05 && m_rs <= 0.05 && m_n <= 0.05 && m_dec <= 1.0 && m_voc <= 0.005,
        format!(
            "median error i_ph {:.2}%, r_s {:.2}%, n {:.2}%; i_0 median {m_dec:.2} decades (worst {worst_decades:.2}); \
             Voc median {:.3}% (worst {:.3}%)",
            100.0 * m_iph,
            100.0 * m_rs,
            100.0 * m_n,
            100.0 * m_voc,
            100.0 * worst_voc
        ),
    )
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn c4_degradation_tracking() -> Verdict {
    let days = 60;
    let profile = WeatherProfile { days, seed: 4, ..Default::default() };
    let scenario = DegradationScenario { r_s: Trajectory::Linear { total_relative_change: 0.2 }, ..Default::default() };
    let d = generate_dataset(&truth(), &topo(), &profile, &scenario, DEFAULT_NOISE, DEFAULT_NOISE).unwrap();
    let init = fit_desoto_from_datasheet(&datasheet_from_params(&truth(), 72, 0.0).unwrap()).unwrap();
    let entries =
        rolling_fit(&d.records, &topo(), &RollingSchedule::default(), &init, &fit_options(), &PreprocessConfig::default())
            .unwrap();
    let start = profile.start;
    let (mut t, mut rs) = (Vec::new(), Vec::new());
    for e in &entries {
        if let Ok(r) = &e.outcome {
            let mid = e.window_start + (e.window_end - e.window_start) / 2;
            t.push((mid - start).num_seconds() as f64 / 86_400.0);
            rs.push(r.params.r_s);
        }
    }
    let injected = 0.2 * truth().r_s / days as f64;
    let fitted = slope(&t, &rs);
    let err = rel(fitted, injected);
    verdict(
        err <= 0.15 && t.len() == entries.len(),
        format!(
            "{} windows, fitted slope {fitted:.3e} ohm/day vs injected {injected:.3e} ({:.1}% off)",
            entries.len(),
            100.0 * err
        ),
    )
}

fn c5_datasheet_round_trip() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_sheet, mut worst_param) = (0.0f64, 0.0f64);
    let mut failures = 0;
    for _ in 0..50 {
        let p = SdmParamsRef::new(
            rng.random_range(6.0..11.0),
            10f64.powf(rng.random_range(-10.5..-8.5)),
            rng.random_range(0.15..0.5),
            rng.random_range(300.0..1500.0),
            rng.random_range(1.0..1.3),
        )
        .unwrap();
        let ds = datasheet_from_params(&p, 72, 0.0).unwrap();
        let Ok(fit) = fit_desoto_from_datasheet(&ds) else {
            failures += 1;
            continue;
        };
        let back = datasheet_from_params(&fit, 72, 0.0).unwrap();
        worst_sheet = worst_sheet.max(rel(back.i_sc, ds.i_sc)).max(rel(back.v_oc, ds.v_oc)).max(rel(back.p_mp(), ds.p_mp()));
        for (a, b) in fit.to_array().iter().zip(p.to_array()) {
            worst_param = worst_param.max(rel(*a, b));
        }
    }
    verdict(
        failures == 0 && worst_sheet < 1e-3 && worst_param < 5e-3,
        format!(
            "{failures} failed extractions; worst Isc/Voc/Pmp error {:.2e}%, worst parameter error {:.3}%",
            100.0 * worst_sheet,
            100.0 * worst_param
        ),
    )
}

fn c6_metric_identities(collected: &Collected) -> Verdict {
    let p_nom = 1000.0;
    let meas = [500.0, 600.0, 700.0, 800.0];
    let pred = [520.0, 590.0, 700.0, 830.0];
    let m = compute_metrics(&pred, &meas, &[800.0; 4], p_nom, None).unwrap();
    let exact = (m.nmae - 0.015).abs() <= 1e-12 && (m.nrmse - (3.5f64).sqrt() / 100.0).abs() <= 1e-12;

    let mut all = collected.reports.clone();
    all.push(m.clone());
    let ordered = all.iter().filter(|r| r.nrmse < r.nmae).count();
    let thresholds = [0.0, 0.01, 0.05, 0.1, 0.2, 0.5];
    let mut monotone = 0;
    for r in &all {
        let ex = exceedance_density(&r.nbe_series, &thresholds).unwrap();
        if ex.windows(2).any(|w| w[1].density > w[0].density) {
            monotone += 1;
        }
        if r.exceedance.windows(2).any(|w| w[0].threshold < w[1].threshold && w[1].density > w[0].density) {
            monotone += 1;
        }
    }
    verdict(
        exact && ordered == 0 && monotone == 0,
        format!(
            "nMAE {:.15}%, nRMSE {:.15}%; {} reports checked, {ordered} with nRMSE < nMAE, {monotone} non-monotone",
            100.0 * m.nmae,
            100.0 * m.nrmse,
            all.len()
        ),
    )
}

fn c7_degraded_ordering(collected: &mut Collected) -> Verdict {
    let mut cfg = config("degraded.json");
    cfg.models.roster = vec![ModelKind::Pvpro, ModelKind::Nominal];
    let data = load_dataset(&cfg).unwrap();
    let out = run_benchmark(&cfg, &data).unwrap();
    collected.add_benchmark(&out.report);
    let pv = out.report.aggregate_nmae(ModelKind::Pvpro).unwrap();
    let nom = out.report.aggregate_nmae(ModelKind::Nominal).unwrap();
    verdict(
        pv < nom && nom >= 3.0 * pv,
        format!("aggregate nMAE pvpro {:.3}%, nominal {:.3}% (ratio {:.1})", 100.0 * pv, 100.0 * nom, nom / pv),
    )
}

fn c8_short_windows() -> Verdict {
    let mut cfg = config("stationary.json");
    if let Some(s) = cfg.data.synthetic.as_mut() {
        s.profile.days = 65;
        s.profile.cloud_days = (0..65).filter(|d| d % 5 == 3).collect();
    }
    let data = load_dataset(&cfg).unwrap();
    let ctx = cfg.model_context().unwrap();
    let rows = training_length_sweep(ModelKind::Pvpro, &data.records, &[3, 60], 5, &ctx, cfg.p_nominal()).unwrap();
    let (Some(short), Some(long)) = (rows[0].nmae, rows[1].nmae) else {
        return verdict(false, format!("a training length could not be scored: {rows:?}"));
    };
    verdict(
        short <= 2.0 * long,
        format!("nMAE 3-day {:.4}% vs 60-day {:.4}% (ratio {:.2})", 100.0 * short, 100.0 * long, short / long),
    )
}

fn c9_weather_robustness(collected: &mut Collected) -> Verdict {
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 1..=5u64 {
        let mut cfg = config("degraded.json");
        cfg.seed = seed;
        cfg.models.roster = vec![ModelKind::Pvpro, ModelKind::Kr];
        cfg.studies.sweep = false;
        let data = load_dataset(&cfg).unwrap();
        let out = run_benchmark(&cfg, &data).unwrap();
        collected.add_benchmark(&out.report);
        match &out.report.studies.weather_cases {
            Some(StudyOutcome::Ok(w)) => {
                for s in w.models.values() {
                    collected.reports.extend(s.cases.iter().map(|c| c.metrics.clone()));
                }
                let cv = |k| w.models.get(&k).map(|s| s.cv_nmae);
                if let (Some(a), Some(b)) = (cv(ModelKind::Pvpro), cv(ModelKind::Kr)) {
                    if a < b {
                        wins += 1;
                    }
                    lines.push(format!("seed {seed}: {a:.3} vs {b:.3}"));
                }
            }
            other => lines.push(format!("seed {seed}: study unavailable ({other:?})")),
        }
    }
    verdict(wins >= 4, format!("pvpro CV below kr in {wins}/5 seeds; {}", lines.join(", ")))
}

fn c10_smart_persistence() -> Verdict {
    let profile = WeatherProfile { days: 2, cloud_days: vec![1], seed: 10, ..Default::default() };
    let d = generate_dataset(&truth(), &topo(), &profile, &DegradationScenario::constant(), 0.0, 0.0).unwrap();
    let k = 31.7;
    let spd = profile.samples_per_day();
    let hist: Vec<PowerSample> =
        d.records[..spd].iter().map(|r| PowerSample { timestamp: r.timestamp, g_poa: r.g_poa, p: k * r.g_poa }).collect();
    let fut: Vec<WeatherPoint> = d.records[spd..].iter().map(WeatherPoint::from).collect();
    let f = smart_persistence(&hist, &fut, Duration::days(1), G_MIN).unwrap();
    let meas: Vec<f64> = fut.iter().map(|w| k * w.g_poa).collect();
    let g: Vec<f64> = fut.iter().map(|w| w.g_poa).collect();
    let m = compute_metrics(&f.values(), &meas, &g, 30_000.0, Some(G_MIN)).unwrap();
    verdict(m.nmae <= 1e-12, format!("nMAE {:.3e} over {} daylight samples", m.nmae, m.n_samples))
}

fn predictions(cfg: &RunConfig, records: &[TelemetryRecord]) -> BTreeMap<ModelKind, Vec<(chrono::NaiveDate, String)>> {
    let ctx = cfg.model_context().unwrap();
    let run = run_day_ahead(cfg, &ctx, records).unwrap();
    run.predictions
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().map(|p| (p.date, format!("{:?}", p.outcome))).collect()))
        .collect()
}

fn c11_temporal_hygiene() -> Verdict {
    let cfg = config("degraded.json");
    let base = load_dataset(&cfg).unwrap().records;
    let reference = predictions(&cfg, &base);
    let days = pvprof_core::benchmark::series_days(&base);
    let mut problems = Vec::new();
    let mut later_changed = false;
    for canary_day in [days[9], days[11]] {
        let mut mutated = base.clone();
        for r in mutated.iter_mut().filter(|r| r.timestamp.date_naive() == canary_day) {
            r.v_dc *= 0.7;
            r.i_dc *= 1.3;
        }
        let got = predictions(&cfg, &mutated);
        for (kind, preds) in &got {
            for (p, q) in preds.iter().zip(&reference[kind]) {
                if p.0 <= canary_day && p != q {
                    problems.push(format!("{kind} {}", p.0));
                }
                if p.0 > canary_day && p != q {
                    later_changed = true;
                }
            }
        }
    }
    verdict(
        problems.is_empty() && later_changed,
        format!(
            "{} changed forecasts on or before the mutated day{}",
            problems.len(),
            if later_changed { "; later days do react" } else { "; later days did not react" }
        ),
    )
}

fn c12_determinism(collected: &mut Collected) -> Verdict {
    let cfg = config("degraded.json");
    let run = |d: &Dataset| run_benchmark(&cfg, d).unwrap().report;
    let a = run(&load_dataset(&cfg).unwrap());
    let b = run(&load_dataset(&cfg).unwrap());
    collected.add_benchmark(&a);
    let (ja, jb) = (a.to_json().unwrap(), b.to_json().unwrap());
    verdict(
        ja == jb && a.generated_at.is_none(),
        format!("{} byte report, identical: {}", ja.len(), ja == jb),
    )
}

fn main() -> ExitCode {
    let mut collected = Collected::default();
    let mut results: Vec<(u8, &str, Verdict, f64)> = Vec::new();
    let mut run = |id: u8, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                verdict(false, format!("panicked: {msg}"))
            });
        results.push((id, name, v, t.elapsed().as_secs_f64()));
    };
    run(1, "solver correctness", &mut c1_solver_correctness);
    run(2, "noiseless recovery", &mut c2_noiseless_recovery);
    run(3, "noisy recovery", &mut c3_noisy_recovery);
    run(4, "degradation tracking", &mut c4_degradation_tracking);
    run(5, "datasheet round-trip", &mut c5_datasheet_round_trip);
    run(7, "degraded system ordering", &mut || c7_degraded_ordering(&mut collected));
    run(8, "short-window robustness", &mut c8_short_windows);
    run(9, "weather-case robustness", &mut || c9_weather_robustness(&mut collected));
    run(10, "smart persistence exactness", &mut c10_smart_persistence);
    run(11, "temporal hygiene canary", &mut c11_temporal_hygiene);
    run(12, "determinism", &mut || c12_determinism(&mut collected));
    run(6, "metric identities", &mut || c6_metric_identities(&collected));
    results.sort_by_key(|r| r.0);

    println!();
    let mut failed = 0;
    for (id, name, v, secs) in &results {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        if !v.pass {
            failed += 1;
        }
        println!("[{tag}] criterion {id:>2} {name}: {} ({secs:.1} s)", v.detail);
    }
    println!("\nacceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
