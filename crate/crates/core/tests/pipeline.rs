use std::path::PathBuf;

use chrono::Duration;

use pvprof_core::analysis::studies::{interpretability_sweep, sweep_anchor, SweepFeature, SweepModel};
use pvprof_core::analysis::{classify_days, compute_metrics, PowerObservation, DEFAULT_CLEAR_THRESHOLD};
use pvprof_core::baselines::datasheet::datasheet_from_params;
use pvprof_core::baselines::persistence::{smart_persistence, PowerSample};
use pvprof_core::benchmark::{load_dataset, run_benchmark};
use pvprof_core::config::RunConfig;
use pvprof_core::fit::{loss, rolling_fit, FitOptions, RollingSchedule};
use pvprof_core::forecast::WeatherPoint;
use pvprof_core::io::{read_telemetry_from, write_telemetry, ColumnMapping};
use pvprof_core::models::ModelKind;
use pvprof_core::preprocess::{PreprocessConfig, TelemetryRecord};
use pvprof_core::sdm::{ArrayTopology, SdmParamsRef};
use pvprof_core::synth::{generate_dataset, DegradationScenario, SkyLabel, WeatherProfile};
use pvprof_core::Error;

fn truth() -> SdmParamsRef {
    SdmParamsRef::new(9.5, 5e-10, 0.35, 400.0, 1.1).unwrap()
}

fn topo() -> ArrayTopology {
    ArrayTopology::new(72, 12, 8).unwrap()
}

fn records(days: usize, seed: u64, noise: f64, cloud_days: Vec<usize>) -> Vec<TelemetryRecord> {
    let profile = WeatherProfile { days, seed, cloud_days, ..Default::default() };
    generate_dataset(&truth(), &topo(), &profile, &DegradationScenario::constant(), noise, noise).unwrap().records
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn loss_at_perturbed_point_matches_high_precision_oracle() {
    // Evaluated independently with 30-digit arithmetic, bisection current
    // solves and golden-section MPP search on the same noiseless window.
    const ORACLE: f64 = 5.3110911908807083e-3;
    let w: Vec<_> = records(3, 1, 0.0, vec![]).into_iter().filter(|r| r.g_poa >= 50.0).collect();
    let ds = datasheet_from_params(&truth(), 72, 0.0).unwrap();
    let opts = FitOptions::from_datasheet(&ds, &topo());
    let mut p = truth();
    p.i_ph_ref *= 0.9;
    p.r_s *= 1.3;
    let l = loss(&p, &w, &topo(), &opts).unwrap();
    assert!((l / ORACLE - 1.0).abs() < 1e-9, "{l:e}");
}

#[test]
fn native_csv_round_trips() {
    let recs = records(2, 4, 0.005, vec![1]);
    let mut a = Vec::new();
    write_telemetry(&mut a, &recs).unwrap();
    let back = read_telemetry_from(a.as_slice(), None).unwrap();
    assert!(back.diagnostics.is_empty());
    assert_eq!(back.records, recs);
    let mut b = Vec::new();
    write_telemetry(&mut b, &back.records).unwrap();
    assert_eq!(a, b);
}

#[test]
fn one_corrupt_row_in_ten_thousand() {
    let recs = records(105, 2, 0.005, vec![]);
    let recs = &recs[..10_000];
    let mut buf = Vec::new();
    write_telemetry(&mut buf, recs).unwrap();
    let mut text = String::from_utf8(buf).unwrap();
    let line = text.lines().nth(5000).unwrap().to_string();
    let broken = line.replacen(',', ",not-a-number,", 1);
    text = text.replacen(&line, &broken, 1);
    let rep = read_telemetry_from(text.as_bytes(), None).unwrap();
    assert_eq!(rep.records.len(), 9999);
    assert_eq!(rep.diagnostics.len(), 1);
    assert_eq!(rep.diagnostics[0].line, 5001);
}

#[test]
fn mapped_headers_give_identical_records() {
    let recs = records(2, 5, 0.005, vec![0]);
    let mapping = ColumnMapping::from_file(&configs_dir().join("pvdaq_mapping.json")).unwrap();
    let mut native = Vec::new();
    write_telemetry(&mut native, &recs).unwrap();
    let mut foreign = String::from("site_id,measured_on,dc_current,dc_voltage,module_temp_1,poa_irradiance\n");
    for r in &recs {
        foreign.push_str(&format!(
            "7,{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.timestamp.format("%Y-%m-%d %H:%M:%S"),
            r.i_dc,
            r.v_dc,
            r.t_module,
            r.g_poa
        ));
    }
    let a = read_telemetry_from(native.as_slice(), None).unwrap();
    let b = read_telemetry_from(foreign.as_bytes(), Some(&mapping)).unwrap();
    assert_eq!(a.records, b.records);
}

#[test]
fn missing_column_is_fatal() {
    let text = "timestamp,g_poa,t_module,v_dc\n2024-06-01T00:00:00Z,0,20,0\n";
    match read_telemetry_from(text.as_bytes(), None) {
        Err(Error::Data(m)) => assert!(m.contains("i_dc")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn rolling_fit_on_constant_truth() {
    let recs = records(30, 8, 0.0, vec![]);
    let ds = datasheet_from_params(&truth(), 72, 0.0).unwrap();
    let opts = FitOptions::from_datasheet(&ds, &topo());
    let mut init = truth();
    init.i_ph_ref *= 0.95;
    init.r_s *= 1.2;
    let entries =
        rolling_fit(&recs, &topo(), &RollingSchedule::default(), &init, &opts, &PreprocessConfig::default()).unwrap();
    assert_eq!(entries.len(), 28);
    for e in &entries {
        let r = e.outcome.as_ref().unwrap();
        for (a, b) in r.params.to_array().iter().zip(truth().to_array()) {
            assert!((a / b - 1.0).abs() < 0.01, "{} {:?}", e.window_end, r.params);
        }
    }
}

#[test]
fn day_labels_agree_with_generator() {
    let mut agree = 0;
    let mut total = 0;
    for seed in 0..2u64 {
        let cloudy: Vec<usize> = (0..10).filter(|d| (d + seed as usize) % 2 == 0).collect();
        let profile = WeatherProfile { days: 10, seed, cloud_days: cloudy, ..Default::default() };
        let d = generate_dataset(&truth(), &topo(), &profile, &DegradationScenario::constant(), 0.005, 0.005).unwrap();
        let obs: Vec<PowerObservation> =
            d.records.iter().map(|r| PowerObservation { timestamp: r.timestamp, g_poa: r.g_poa, p: r.power() }).collect();
        let labels = classify_days(&obs, 50.0, DEFAULT_CLEAR_THRESHOLD);
        for day in &d.truth.days {
            total += 1;
            if labels.get(&day.date) == Some(&day.label) {
                agree += 1;
            }
        }
    }
    assert_eq!(total, 20);
    assert!(agree as f64 >= 0.95 * total as f64, "{agree}/{total}");
}

#[test]
fn smart_persistence_matches_shifted_difference() {
    let recs = records(2, 9, 0.005, vec![]);
    let spd = recs.len() / 2;
    let (d0, d1) = recs.split_at(spd);
    let hist: Vec<PowerSample> = d0.iter().map(PowerSample::from).collect();
    let fut: Vec<WeatherPoint> = d1.iter().map(WeatherPoint::from).collect();
    let f = smart_persistence(&hist, &fut, Duration::days(1), 50.0).unwrap();
    let meas: Vec<f64> = d1.iter().map(|r| r.power()).collect();
    let g: Vec<f64> = d1.iter().map(|r| r.g_poa).collect();
    let p_nom = 30_000.0;
    let m = compute_metrics(&f.values(), &meas, &g, p_nom, Some(50.0)).unwrap();

    let (mut sum, mut n) = (0.0, 0);
    for (a, b) in d0.iter().zip(d1) {
        if b.g_poa >= 50.0 {
            sum += (a.power() - b.power()).abs() / p_nom;
            n += 1;
        }
    }
    assert!(m.nmae > 0.0);
    assert!((m.nmae - sum / n as f64).abs() < 1e-12);
}

#[test]
fn reference_curve_falls_with_temperature() {
    let c = interpretability_sweep(
        SweepModel::Physical { params: &truth(), topology: &topo() },
        SweepFeature::TModule,
        SweepFeature::TModule.range(),
        101,
        sweep_anchor(),
        None,
    )
    .unwrap();
    assert!(c.power.windows(2).all(|w| w[1] < w[0]));
}

fn noiseless_config(days: usize) -> RunConfig {
    RunConfig::from_json(&format!(
        r#"{{
            "data": {{"synthetic": {{
                "true_params": {{"i_ph_ref": 9.5, "i_0_ref": 5e-10, "r_s": 0.35, "r_sh_ref": 400.0, "n_diode": 1.1}},
                "profile": {{"days": {days}, "cloud_days": [1]}},
                "noise_v": 0.0, "noise_i": 0.0
            }}}},
            "system": {{
                "topology": {{"cells_in_series": 72, "modules_per_string": 12, "strings_in_parallel": 8}},
                "datasheet": {{"v_oc": 48.134, "i_sc": 9.4917, "v_mp": 39.050, "i_mp": 8.8960,
                               "alpha_isc": 0.0, "beta_voc": -0.1562, "cells_in_series": 72}}
            }},
            "models": {{"roster": ["pvpro", "smart_persistence", "nominal"]}},
            "studies": {{"sweep": false}}
        }}"#
    ))
    .unwrap()
}

#[test]
fn noiseless_benchmark_is_nearly_exact() {
    let cfg = noiseless_config(6);
    let data = load_dataset(&cfg).unwrap();
    let out = run_benchmark(&cfg, &data).unwrap();
    let e = out.report.aggregate_nmae(ModelKind::Pvpro).unwrap();
    assert!(e < 1e-3, "{e}");
    assert_eq!(out.report.forecast_days.len(), 3);
    for days in out.report.daily.values() {
        assert!(days.iter().all(|d| d.metrics.is_some() || d.skip_reason.is_some()));
    }
    for m in out.report.aggregate.values().flatten() {
        assert!(m.nrmse >= m.nmae);
    }
}

#[test]
fn config_hash_tracks_content() {
    let a = noiseless_config(6);
    let b = noiseless_config(6);
    let c = noiseless_config(7);
    assert_eq!(a.hash(), b.hash());
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn checked_in_configs_parse() {
    for name in ["degraded.json", "stationary.json"] {
        let cfg = RunConfig::from_file(&configs_dir().join(name)).unwrap();
        cfg.validate().unwrap();
        assert!(cfg.data.synthetic.is_some());
    }
}

#[test]
fn clear_and_cloudy_labels_exist() {
    let profile = WeatherProfile { days: 2, cloud_days: vec![1], ..Default::default() };
    let d = generate_dataset(&truth(), &topo(), &profile, &DegradationScenario::constant(), 0.0, 0.0).unwrap();
    assert_eq!(d.truth.days[0].label, SkyLabel::Clear);
    assert_eq!(d.truth.days[1].label, SkyLabel::Cloudy);
}

#[test]
fn truth_beats_random_points_and_fits_repeat() {
    use rand::{Rng, SeedableRng};
    let w: Vec<_> = records(3, 12, 0.0, vec![]).into_iter().filter(|r| r.g_poa >= 50.0).collect();
    let ds = datasheet_from_params(&truth(), 72, 0.0).unwrap();
    let opts = FitOptions::from_datasheet(&ds, &topo());
    let at_truth = loss(&truth(), &w, &topo(), &opts).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let z: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
        let p = opts.from_unit(&z);
        if let Ok(l) = loss(&p, &w, &topo(), &opts) {
            assert!(at_truth <= l);
        }
    }
    let mut init = truth();
    init.n_diode *= 1.1;
    let a = pvprof_core::fit::fit_window(&w, &topo(), &init, &opts).unwrap();
    let b = pvprof_core::fit::fit_window(&w, &topo(), &init, &opts).unwrap();
    assert_eq!(a, b);
}
