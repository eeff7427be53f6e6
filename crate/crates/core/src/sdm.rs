//! De Soto single-diode model.
//!
//! Reference parameters are translated to an operating point (irradiance and
//! cell temperature), after which the implicit I-V relation
//!
//! ```text
//! i = i_ph - i_0 * (exp((v + i*r_s) / a) - 1) - (v + i*r_s) / r_sh
//! ```
//!
//! is solved for current, voltage or the maximum power point. All quantities
//! are at module level unless the function name says otherwise.
//!
//! Internally the curve is walked in the diode-voltage coordinate
//! `x = v + i*r_s`, in which the current is explicit. The map `x -> v` is
//! strictly increasing, so brackets and extrema carry over unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOLTZMANN: f64 = 1.380649e-23;
pub const ELEMENTARY_CHARGE: f64 = 1.602176634e-19;
/// Boltzmann constant in eV/K.
pub const BOLTZMANN_EV: f64 = BOLTZMANN / ELEMENTARY_CHARGE;

pub const G_REF: f64 = 1000.0;
pub const T_REF_C: f64 = 25.0;
pub const KELVIN_OFFSET: f64 = 273.15;
pub const BAND_GAP_REF_EV: f64 = 1.121;
pub const BAND_GAP_TEMP_COEFF: f64 = 0.0002677;

/// Shunt resistance used when the irradiance is zero.
pub const NIGHT_SHUNT_CAP: f64 = 1e8;

pub const N_DIODE_MIN: f64 = 0.5;
pub const N_DIODE_MAX: f64 = 2.5;

const MAX_EXP_ARG: f64 = 700.0;
const MAX_SOLVER_ITER: usize = 300;
/// Residual budget for every returned root, in amperes.
pub const RESIDUAL_TOL: f64 = 1e-9;

/// The five single-diode parameters at reference conditions (1000 W/m², 25 °C).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdmParamsRef {
    /// Photocurrent (A).
    pub i_ph_ref: f64,
    /// Diode saturation current (A).
    pub i_0_ref: f64,
    /// Series resistance (Ω).
    pub r_s: f64,
    /// Shunt resistance (Ω).
    pub r_sh_ref: f64,
    /// Diode ideality factor.
    pub n_diode: f64,
}

impl SdmParamsRef {
    pub fn new(i_ph_ref: f64, i_0_ref: f64, r_s: f64, r_sh_ref: f64, n_diode: f64) -> Result<Self> {
        let p = Self { i_ph_ref, i_0_ref, r_s, r_sh_ref, n_diode };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = self.to_array();
        if vals.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidParams(format!("all parameters must be positive and finite: {self:?}")));
        }
        if !(N_DIODE_MIN..=N_DIODE_MAX).contains(&self.n_diode) {
            return Err(Error::InvalidParams(format!(
                "n_diode {} outside [{N_DIODE_MIN}, {N_DIODE_MAX}]",
                self.n_diode
            )));
        }
        if self.i_0_ref >= self.i_ph_ref {
            return Err(Error::InvalidParams("i_0_ref must be below i_ph_ref".into()));
        }
        Ok(())
    }

    /// Parameters in the fixed order `[i_ph_ref, i_0_ref, r_s, r_sh_ref, n_diode]`.
    pub fn to_array(&self) -> [f64; 5] {
        [self.i_ph_ref, self.i_0_ref, self.r_s, self.r_sh_ref, self.n_diode]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self { i_ph_ref: a[0], i_0_ref: a[1], r_s: a[2], r_sh_ref: a[3], n_diode: a[4] }
    }

    /// Modified ideality factor `n*Ns*k*T/q` at the reference temperature.
    pub fn a_ref(&self, cells_in_series: u32) -> f64 {
        modified_ideality(self.n_diode, cells_in_series, T_REF_C + KELVIN_OFFSET)
    }
}

pub fn modified_ideality(n_diode: f64, cells_in_series: u32, t_kelvin: f64) -> f64 {
    n_diode * f64::from(cells_in_series) * BOLTZMANN * t_kelvin / ELEMENTARY_CHARGE
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingConditions {
    /// Plane-of-array irradiance (W/m²).
    pub g_poa: f64,
    /// Cell temperature (°C).
    pub t_cell: f64,
}

impl OperatingConditions {
    pub fn new(g_poa: f64, t_cell: f64) -> Result<Self> {
        let c = Self { g_poa, t_cell };
        c.validate()?;
        Ok(c)
    }

    pub fn stc() -> Self {
        Self { g_poa: G_REF, t_cell: T_REF_C }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.g_poa.is_finite() || self.g_poa < 0.0 {
            return Err(Error::InvalidInput(format!("g_poa {} must be finite and >= 0", self.g_poa)));
        }
        if !self.t_cell.is_finite() || !(-60.0..=120.0).contains(&self.t_cell) {
            return Err(Error::InvalidInput(format!("t_cell {} outside [-60, 120] °C", self.t_cell)));
        }
        Ok(())
    }
}

/// Single-diode parameters at one operating point, module level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdmParamsOperating {
    pub i_ph: f64,
    pub i_0: f64,
    pub r_s: f64,
    pub r_sh: f64,
    /// Modified ideality factor `n*Ns*k*T/q` (V).
    pub a_mod: f64,
}

/// Array layout. `alpha_isc` is the module short-circuit current temperature
/// coefficient (A/°C) applied in the photocurrent translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayTopology {
    pub cells_in_series: u32,
    pub modules_per_string: u32,
    pub strings_in_parallel: u32,
    #[serde(default)]
    pub alpha_isc: f64,
}

impl ArrayTopology {
    pub fn new(cells_in_series: u32, modules_per_string: u32, strings_in_parallel: u32) -> Result<Self> {
        let t = Self { cells_in_series, modules_per_string, strings_in_parallel, alpha_isc: 0.0 };
        t.validate()?;
        Ok(t)
    }

    pub fn with_alpha_isc(mut self, alpha_isc: f64) -> Self {
        self.alpha_isc = alpha_isc;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells_in_series == 0 || self.modules_per_string == 0 || self.strings_in_parallel == 0 {
            return Err(Error::InvalidParams(format!("topology counts must be >= 1: {self:?}")));
        }
        if !self.alpha_isc.is_finite() {
            return Err(Error::InvalidParams("alpha_isc must be finite".into()));
        }
        Ok(())
    }

    pub fn module_count(&self) -> u32 {
        self.modules_per_string * self.strings_in_parallel
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvPoint {
    pub v: f64,
    pub i: f64,
    pub p: f64,
}

impl IvPoint {
    pub fn new(v: f64, i: f64) -> Self {
        Self { v, i, p: v * i }
    }

    pub const ZERO: IvPoint = IvPoint { v: 0.0, i: 0.0, p: 0.0 };
}

/// Translates reference parameters to the given operating conditions with a
/// zero short-circuit temperature coefficient.
pub fn translate_to_operating(
    params: &SdmParamsRef,
    cond: &OperatingConditions,
    cells_in_series: u32,
) -> SdmParamsOperating {
    translate_with_alpha(params, cond, cells_in_series, 0.0)
}

pub fn translate_with_alpha(
    params: &SdmParamsRef,
    cond: &OperatingConditions,
    cells_in_series: u32,
    alpha_isc: f64,
) -> SdmParamsOperating {
    let t_ref = T_REF_C + KELVIN_OFFSET;
    let t_cell = cond.t_cell + KELVIN_OFFSET;
    let d_t = t_cell - t_ref;

    let band_gap = BAND_GAP_REF_EV * (1.0 - BAND_GAP_TEMP_COEFF * d_t);
    let i_0 = params.i_0_ref
        * (t_cell / t_ref).powi(3)
        * ((BAND_GAP_REF_EV / t_ref - band_gap / t_cell) / BOLTZMANN_EV).exp();
    let a_mod = modified_ideality(params.n_diode, cells_in_series, t_cell);

    if cond.g_poa <= 0.0 {
        return SdmParamsOperating { i_ph: 0.0, i_0, r_s: params.r_s, r_sh: NIGHT_SHUNT_CAP, a_mod };
    }
    let g_ratio = cond.g_poa / G_REF;
    let i_ph = (g_ratio * (params.i_ph_ref + alpha_isc * d_t)).max(0.0);
    let r_sh = (params.r_sh_ref / g_ratio).min(NIGHT_SHUNT_CAP);
    SdmParamsOperating { i_ph, i_0, r_s: params.r_s, r_sh, a_mod }
}

impl SdmParamsOperating {
    fn diode_exp(&self, x: f64) -> f64 {
        (x / self.a_mod).min(MAX_EXP_ARG).exp()
    }

    /// Terminal current as an explicit function of the diode voltage `x`.
    pub fn current_at_diode_voltage(&self, x: f64) -> f64 {
        self.i_ph - self.i_0 * (self.diode_exp(x) - 1.0) - x / self.r_sh
    }

    /// `dI/dx` and `d²I/dx²` in the diode-voltage coordinate.
    fn current_derivatives(&self, x: f64) -> (f64, f64) {
        let e = self.i_0 * self.diode_exp(x) / self.a_mod;
        (-e - 1.0 / self.r_sh, -e / self.a_mod)
    }

    /// Residual of the implicit diode equation at `(v, i)`; zero on the curve.
    pub fn residual(&self, v: f64, i: f64) -> f64 {
        let x = v + i * self.r_s;
        i - self.i_ph + self.i_0 * (self.diode_exp(x) - 1.0) + x / self.r_sh
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.i_ph.is_finite()
            && self.i_ph >= 0.0
            && self.i_0.is_finite()
            && self.i_0 >= 0.0
            && self.r_s.is_finite()
            && self.r_s >= 0.0
            && self.r_sh.is_finite()
            && self.r_sh > 0.0
            && self.a_mod.is_finite()
            && self.a_mod > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("invalid operating parameters: {self:?}")))
        }
    }

    /// Diode voltage at which the terminal current equals `i`.
    fn diode_voltage_for_current(&self, i: f64) -> Result<f64> {
        let target = self.i_ph - i;
        if target <= 0.0 {
            return Ok(0.0);
        }
        // D(x) = i_ph - i - i_0 (e^{x/a} - 1) - x/r_sh is strictly decreasing.
        let mut hi = target * self.r_sh;
        if self.i_0 > 0.0 {
            hi = hi.min(self.a_mod * (target / self.i_0).ln_1p());
        }
        let f = |x: f64| {
            let (d1, _) = self.current_derivatives(x);
            (self.current_at_diode_voltage(x) - i, d1)
        };
        safeguarded_newton(f, 0.0, hi, hi).map_err(|reason| Error::SolverFailure { v: f64::NAN, i, reason })
    }
}

/// Safeguarded Newton iteration on a bracket `[lo, hi]` whose endpoints have
/// opposite signs (or one endpoint is an exact root). Falls back to bisection
/// whenever the Newton step leaves the bracket or stalls.
fn safeguarded_newton<F>(f: F, lo: f64, hi: f64, start: f64) -> std::result::Result<f64, String>
where
    F: Fn(f64) -> (f64, f64),
{
    let (f_lo, _) = f(lo);
    let (f_hi, _) = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(format!("no sign change on [{lo}, {hi}] ({f_lo}, {f_hi})"));
    }
    // Orient so that f(neg) < 0 < f(pos).
    let (mut neg, mut pos) = if f_lo < 0.0 { (lo, hi) } else { (hi, lo) };
    let mut x = start.clamp(lo.min(hi), lo.max(hi));
    let mut dx_old = (hi - lo).abs();
    let mut dx = dx_old;
    let (mut fx, mut dfx) = f(x);
    for _ in 0..MAX_SOLVER_ITER {
        if fx == 0.0 {
            return Ok(x);
        }
        let newton_out = ((x - pos) * dfx - fx) * ((x - neg) * dfx - fx) > 0.0;
        let slow = (2.0 * fx).abs() > (dx_old * dfx).abs();
        dx_old = dx;
        if newton_out || slow || dfx == 0.0 {
            dx = 0.5 * (pos - neg);
            x = neg + dx;
        } else {
            dx = fx / dfx;
            x -= dx;
        }
        let tol = 4.0 * f64::EPSILON * x.abs().max(1e-300);
        if dx.abs() <= tol {
            return Ok(x);
        }
        (fx, dfx) = f(x);
        if fx < 0.0 {
            neg = x;
        } else {
            pos = x;
        }
        if (pos - neg).abs() <= tol {
            return Ok(x);
        }
    }
    Err("iteration limit reached".into())
}

fn check_residual(op: &SdmParamsOperating, v: f64, i: f64) -> Result<()> {
    let r = op.residual(v, i);
    if r.abs() < RESIDUAL_TOL {
        Ok(())
    } else {
        Err(Error::SolverFailure { v, i, reason: format!("residual {r:e} above tolerance") })
    }
}

/// Current delivered at terminal voltage `v`.
pub fn solve_current(v: f64, op: &SdmParamsOperating) -> Result<f64> {
    op.validate()?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::InvalidInput(format!("voltage {v} must be finite and >= 0")));
    }
    let g = |i: f64| {
        let x = v + i * op.r_s;
        let e = op.i_0 * op.diode_exp(x);
        (i - op.i_ph + (e - op.i_0) + x / op.r_sh, 1.0 + op.r_s * (e / op.a_mod + 1.0 / op.r_sh))
    };
    let scale = op.i_ph.max(1e-9);
    let mut lo = -scale;
    let mut hi = 2.0 * scale;
    let mut expansions = 0;
    while g(lo).0 > 0.0 || g(hi).0 < 0.0 {
        if g(lo).0 > 0.0 {
            lo *= 2.0;
        } else {
            hi *= 2.0;
        }
        expansions += 1;
        if expansions > 200 {
            return Err(Error::SolverFailure { v, i: f64::NAN, reason: "bracket expansion failed".into() });
        }
    }
    let guess = op.i_ph - op.i_0 * (op.diode_exp(v) - 1.0) - v / op.r_sh;
    let i = safeguarded_newton(g, lo, hi, guess).map_err(|reason| Error::SolverFailure { v, i: f64::NAN, reason })?;
    check_residual(op, v, i)?;
    Ok(i)
}

/// Terminal voltage at which the module delivers current `i`.
pub fn solve_voltage(i: f64, op: &SdmParamsOperating) -> Result<f64> {
    op.validate()?;
    if !i.is_finite() || i < 0.0 {
        return Err(Error::InvalidInput(format!("current {i} must be finite and >= 0")));
    }
    let i_sc = short_circuit_current(op)?;
    if i > i_sc {
        // Allow the last ulp or so of round-off at the boundary.
        if i - i_sc > 1e-12 * i_sc.max(1e-12) {
            return Err(Error::CurrentOutOfRange { i, i_sc });
        }
        return Ok(0.0);
    }
    let x = op.diode_voltage_for_current(i)?;
    let v = (x - i * op.r_s).max(0.0);
    check_residual(op, v, i)?;
    Ok(v)
}

pub fn open_circuit_voltage(op: &SdmParamsOperating) -> Result<f64> {
    solve_voltage(0.0, op)
}

pub fn short_circuit_current(op: &SdmParamsOperating) -> Result<f64> {
    solve_current(0.0, op)
}

/// Maximum power point on `v ∈ [0, Voc]`.
///
/// The stationary point of `P` is located in the diode-voltage coordinate,
/// where `dP/dx` has a single sign change between short circuit and open
/// circuit.
pub fn find_mpp(op: &SdmParamsOperating) -> Result<IvPoint> {
    op.validate()?;
    if op.i_ph <= 0.0 {
        return Ok(IvPoint::ZERO);
    }
    let i_sc = short_circuit_current(op)?;
    let x_sc = i_sc * op.r_s;
    let x_oc = op.diode_voltage_for_current(0.0)?;

    let dp = |x: f64| {
        let i = op.current_at_diode_voltage(x);
        let (di, d2i) = op.current_derivatives(x);
        let v = x - op.r_s * i;
        let dv = 1.0 - op.r_s * di;
        let d2v = -op.r_s * d2i;
        let dp = dv * i + v * di;
        let d2p = d2v * i + 2.0 * dv * di + v * d2i;
        (dp, d2p)
    };
    let start = x_sc + 0.8 * (x_oc - x_sc);
    let x = safeguarded_newton(dp, x_sc, x_oc, start)
        .map_err(|reason| Error::SolverFailure { v: f64::NAN, i: f64::NAN, reason })?;
    let i = op.current_at_diode_voltage(x);
    let v = x - op.r_s * i;
    if v <= 0.0 || i <= 0.0 {
        return Ok(IvPoint::ZERO);
    }
    check_residual(op, v, i)?;
    Ok(IvPoint::new(v, i))
}

/// Array-level MPP `(v_dc, i_dc)` for a uniform array.
pub fn simulate_array_mpp(
    params: &SdmParamsRef,
    topo: &ArrayTopology,
    cond: &OperatingConditions,
) -> Result<(f64, f64)> {
    let op = translate_with_alpha(params, cond, topo.cells_in_series, topo.alpha_isc);
    let mpp = find_mpp(&op)?;
    Ok((mpp.v * f64::from(topo.modules_per_string), mpp.i * f64::from(topo.strings_in_parallel)))
}

/// Array MPP power in watts.
pub fn array_power(params: &SdmParamsRef, topo: &ArrayTopology, cond: &OperatingConditions) -> Result<f64> {
    simulate_array_mpp(params, topo, cond).map(|(v, i)| v * i)
}
