use chrono::{DateTime, Duration, TimeZone, Utc};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pvprof_core::analysis::compute_metrics as core_metrics;
use pvprof_core::baselines::datasheet as ds;
use pvprof_core::baselines::persistence::{smart_persistence as core_smart, PowerSample};
use pvprof_core::benchmark::{load_dataset, run_benchmark as core_benchmark};
use pvprof_core::config::RunConfig;
use pvprof_core::fit::{fit_window as core_fit_window, FitOptions};
use pvprof_core::forecast::WeatherPoint;
use pvprof_core::preprocess::TelemetryRecord;
use pvprof_core::sdm;
use pvprof_core::synth::{generate_dataset as core_generate, DegradationScenario, WeatherProfile};
use pvprof_core::Error;

fn py_err(e: Error) -> PyErr {
    match e.exit_code() {
        2 | 3 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Reference-condition single-diode parameters.
#[pyclass(name = "SdmParams", from_py_object)]
#[derive(Clone, Copy)]
struct PySdmParams {
    inner: sdm::SdmParamsRef,
}

#[pymethods]
impl PySdmParams {
    #[new]
    fn new(i_ph_ref: f64, i_0_ref: f64, r_s: f64, r_sh_ref: f64, n_diode: f64) -> PyResult<Self> {
        sdm::SdmParamsRef::new(i_ph_ref, i_0_ref, r_s, r_sh_ref, n_diode).map(|inner| Self { inner }).map_err(py_err)
    }

    #[getter]
    fn i_ph_ref(&self) -> f64 {
        self.inner.i_ph_ref
    }
    #[getter]
    fn i_0_ref(&self) -> f64 {
        self.inner.i_0_ref
    }
    #[getter]
    fn r_s(&self) -> f64 {
        self.inner.r_s
    }
    #[getter]
    fn r_sh_ref(&self) -> f64 {
        self.inner.r_sh_ref
    }
    #[getter]
    fn n_diode(&self) -> f64 {
        self.inner.n_diode
    }

    fn to_list(&self) -> Vec<f64> {
        self.inner.to_array().to_vec()
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "SdmParams(i_ph_ref={}, i_0_ref={:e}, r_s={}, r_sh_ref={}, n_diode={})",
            p.i_ph_ref, p.i_0_ref, p.r_s, p.r_sh_ref, p.n_diode
        )
    }
}

#[pyclass(name = "ArrayTopology", from_py_object)]
#[derive(Clone, Copy)]
struct PyTopology {
    inner: sdm::ArrayTopology,
}

#[pymethods]
impl PyTopology {
    #[new]
    #[pyo3(signature = (cells_in_series, modules_per_string, strings_in_parallel, alpha_isc = 0.0))]
    fn new(cells_in_series: u32, modules_per_string: u32, strings_in_parallel: u32, alpha_isc: f64) -> PyResult<Self> {
        sdm::ArrayTopology::new(cells_in_series, modules_per_string, strings_in_parallel)
            .map(|t| Self { inner: t.with_alpha_isc(alpha_isc) })
            .map_err(py_err)
    }

    #[getter]
    fn cells_in_series(&self) -> u32 {
        self.inner.cells_in_series
    }
    #[getter]
    fn modules_per_string(&self) -> u32 {
        self.inner.modules_per_string
    }
    #[getter]
    fn strings_in_parallel(&self) -> u32 {
        self.inner.strings_in_parallel
    }
}

#[pyclass(name = "Datasheet", from_py_object)]
#[derive(Clone, Copy)]
struct PyDatasheet {
    inner: ds::Datasheet,
}

#[pymethods]
impl PyDatasheet {
    #[new]
    #[pyo3(signature = (v_oc, i_sc, v_mp, i_mp, beta_voc, cells_in_series, alpha_isc = 0.0))]
    fn new(v_oc: f64, i_sc: f64, v_mp: f64, i_mp: f64, beta_voc: f64, cells_in_series: u32, alpha_isc: f64) -> PyResult<Self> {
        let inner = ds::Datasheet { v_oc, i_sc, v_mp, i_mp, alpha_isc, beta_voc, cells_in_series };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn v_oc(&self) -> f64 {
        self.inner.v_oc
    }
    #[getter]
    fn i_sc(&self) -> f64 {
        self.inner.i_sc
    }
    #[getter]
    fn v_mp(&self) -> f64 {
        self.inner.v_mp
    }
    #[getter]
    fn i_mp(&self) -> f64 {
        self.inner.i_mp
    }
    #[getter]
    fn beta_voc(&self) -> f64 {
        self.inner.beta_voc
    }
}

fn operating(params: &PySdmParams, g_poa: f64, t_cell: f64, cells_in_series: u32) -> PyResult<sdm::SdmParamsOperating> {
    let cond = sdm::OperatingConditions::new(g_poa, t_cell).map_err(py_err)?;
    Ok(sdm::translate_to_operating(&params.inner, &cond, cells_in_series))
}

/// Current at terminal voltage `v` for one module.
#[pyfunction]
#[pyo3(signature = (v, params, g_poa = 1000.0, t_cell = 25.0, cells_in_series = 72))]
fn solve_current(v: f64, params: &PySdmParams, g_poa: f64, t_cell: f64, cells_in_series: u32) -> PyResult<f64> {
    sdm::solve_current(v, &operating(params, g_poa, t_cell, cells_in_series)?).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (i, params, g_poa = 1000.0, t_cell = 25.0, cells_in_series = 72))]
fn solve_voltage(i: f64, params: &PySdmParams, g_poa: f64, t_cell: f64, cells_in_series: u32) -> PyResult<f64> {
    sdm::solve_voltage(i, &operating(params, g_poa, t_cell, cells_in_series)?).map_err(py_err)
}

/// Module maximum power point as `(v, i, p)`.
#[pyfunction]
#[pyo3(signature = (params, g_poa = 1000.0, t_cell = 25.0, cells_in_series = 72))]
fn find_mpp(params: &PySdmParams, g_poa: f64, t_cell: f64, cells_in_series: u32) -> PyResult<(f64, f64, f64)> {
    let p = sdm::find_mpp(&operating(params, g_poa, t_cell, cells_in_series)?).map_err(py_err)?;
    Ok((p.v, p.i, p.p))
}

/// Array DC voltage and current at the maximum power point.
#[pyfunction]
fn simulate_array_mpp(params: &PySdmParams, topology: &PyTopology, g_poa: f64, t_cell: f64) -> PyResult<(f64, f64)> {
    let cond = sdm::OperatingConditions::new(g_poa, t_cell).map_err(py_err)?;
    sdm::simulate_array_mpp(&params.inner, &topology.inner, &cond).map_err(py_err)
}

#[pyfunction]
fn fit_desoto_from_datasheet(datasheet: &PyDatasheet) -> PyResult<PySdmParams> {
    ds::fit_desoto_from_datasheet(&datasheet.inner).map(|inner| PySdmParams { inner }).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (params, cells_in_series, alpha_isc = 0.0))]
fn datasheet_from_params(params: &PySdmParams, cells_in_series: u32, alpha_isc: f64) -> PyResult<PyDatasheet> {
    ds::datasheet_from_params(&params.inner, cells_in_series, alpha_isc).map(|inner| PyDatasheet { inner }).map_err(py_err)
}

fn records_to_dict<'py>(py: Python<'py>, records: &[TelemetryRecord]) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("timestamp", records.iter().map(|r| r.timestamp.timestamp()).collect::<Vec<_>>())?;
    d.set_item("g_poa", records.iter().map(|r| r.g_poa).collect::<Vec<_>>())?;
    d.set_item("t_module", records.iter().map(|r| r.t_module).collect::<Vec<_>>())?;
    d.set_item("v_dc", records.iter().map(|r| r.v_dc).collect::<Vec<_>>())?;
    d.set_item("i_dc", records.iter().map(|r| r.i_dc).collect::<Vec<_>>())?;
    Ok(d)
}

fn records_from_columns(
    timestamp: &[i64],
    g_poa: &[f64],
    t_module: &[f64],
    v_dc: &[f64],
    i_dc: &[f64],
) -> PyResult<Vec<TelemetryRecord>> {
    let n = timestamp.len();
    if [g_poa.len(), t_module.len(), v_dc.len(), i_dc.len()].iter().any(|l| *l != n) {
        return Err(PyValueError::new_err("telemetry columns differ in length"));
    }
    (0..n)
        .map(|k| {
            let ts: DateTime<Utc> = Utc
                .timestamp_opt(timestamp[k], 0)
                .single()
                .ok_or_else(|| PyValueError::new_err(format!("bad timestamp {}", timestamp[k])))?;
            Ok(TelemetryRecord { timestamp: ts, g_poa: g_poa[k], t_module: t_module[k], v_dc: v_dc[k], i_dc: i_dc[k] })
        })
        .collect()
}

/// Synthetic MPP telemetry. Timestamps are Unix seconds.
#[pyfunction]
#[pyo3(signature = (params, topology, days = 3, seed = 0, noise = 0.005, cloud_days = Vec::new()))]
fn generate_dataset<'py>(
    py: Python<'py>,
    params: &PySdmParams,
    topology: &PyTopology,
    days: usize,
    seed: u64,
    noise: f64,
    cloud_days: Vec<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let profile = WeatherProfile { days, seed, cloud_days, ..Default::default() };
    let d = core_generate(&params.inner, &topology.inner, &profile, &DegradationScenario::constant(), noise, noise)
        .map_err(py_err)?;
    records_to_dict(py, &d.records)
}

/// Fits reference parameters to one window of telemetry columns.
#[pyfunction]
#[pyo3(signature = (timestamp, g_poa, t_module, v_dc, i_dc, topology, datasheet, init = None, g_min = 50.0))]
#[allow(clippy::too_many_arguments)]
fn fit_window<'py>(
    py: Python<'py>,
    timestamp: Vec<i64>,
    g_poa: Vec<f64>,
    t_module: Vec<f64>,
    v_dc: Vec<f64>,
    i_dc: Vec<f64>,
    topology: &PyTopology,
    datasheet: &PyDatasheet,
    init: Option<PySdmParams>,
    g_min: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let records = records_from_columns(&timestamp, &g_poa, &t_module, &v_dc, &i_dc)?;
    let window: Vec<TelemetryRecord> = records.into_iter().filter(|r| r.g_poa >= g_min).collect();
    let opts = FitOptions::from_datasheet(&datasheet.inner, &topology.inner);
    let start = match init {
        Some(p) => p.inner,
        None => pvprof_core::fit::initial_guess(&datasheet.inner).map_err(py_err)?,
    };
    let r = py.detach(|| core_fit_window(&window, &topology.inner, &start, &opts)).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("params", PySdmParams { inner: r.params })?;
    d.set_item("final_loss", r.final_loss)?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("converged", r.converged)?;
    d.set_item("n_points", r.n_points)?;
    Ok(d)
}

/// nMAE, nRMSE and mean nBE; `g_min` restricts scoring to daylight samples.
#[pyfunction]
#[pyo3(signature = (pred, meas, g_poa, p_nominal, g_min = None))]
fn compute_metrics<'py>(
    py: Python<'py>,
    pred: Vec<f64>,
    meas: Vec<f64>,
    g_poa: Vec<f64>,
    p_nominal: f64,
    g_min: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let m = core_metrics(&pred, &meas, &g_poa, p_nominal, g_min).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("n_samples", m.n_samples)?;
    d.set_item("nmae", m.nmae)?;
    d.set_item("nrmse", m.nrmse)?;
    d.set_item("nbe_mean", m.nbe_mean)?;
    d.set_item("nbe_series", m.nbe_series)?;
    Ok(d)
}

/// Irradiance-scaled persistence for index-aligned days: output `k` uses
/// sample `k` of the previous day.
#[pyfunction]
#[pyo3(signature = (p_prev, g_prev, g_next, g_min = 50.0))]
fn smart_persistence(p_prev: Vec<f64>, g_prev: Vec<f64>, g_next: Vec<f64>, g_min: f64) -> PyResult<Vec<f64>> {
    if p_prev.len() != g_prev.len() || g_prev.len() != g_next.len() {
        return Err(PyValueError::new_err("series differ in length"));
    }
    let n = p_prev.len() as i64;
    if n == 0 {
        return Ok(Vec::new());
    }
    let t0 = Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap();
    let step = Duration::seconds(86_400 / n.max(1));
    let hist: Vec<PowerSample> = (0..n as usize)
        .map(|k| PowerSample { timestamp: t0 + step * k as i32, g_poa: g_prev[k], p: p_prev[k] })
        .collect();
    let fut: Vec<WeatherPoint> = (0..n as usize)
        .map(|k| WeatherPoint { timestamp: t0 + Duration::days(1) + step * k as i32, g_poa: g_next[k], t_module: 25.0 })
        .collect();
    core_smart(&hist, &fut, Duration::days(1), g_min).map(|f| f.values()).map_err(py_err)
}

/// Runs the benchmark described by a config file and returns the report as JSON.
#[pyfunction]
fn run_benchmark(py: Python<'_>, config_path: &str) -> PyResult<String> {
    let cfg = RunConfig::from_file(std::path::Path::new(config_path)).map_err(py_err)?;
    py.detach(|| {
        let data = load_dataset(&cfg)?;
        core_benchmark(&cfg, &data)?.report.to_json()
    })
    .map_err(py_err)
}

#[pymodule]
fn pvprof(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySdmParams>()?;
    m.add_class::<PyTopology>()?;
    m.add_class::<PyDatasheet>()?;
    m.add_function(wrap_pyfunction!(solve_current, m)?)?;
    m.add_function(wrap_pyfunction!(solve_voltage, m)?)?;
    m.add_function(wrap_pyfunction!(find_mpp, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_array_mpp, m)?)?;
    m.add_function(wrap_pyfunction!(fit_desoto_from_datasheet, m)?)?;
    m.add_function(wrap_pyfunction!(datasheet_from_params, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(fit_window, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(smart_persistence, m)?)?;
    m.add_function(wrap_pyfunction!(run_benchmark, m)?)?;
    Ok(())
}
