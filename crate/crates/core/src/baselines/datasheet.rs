//! Five-parameter extraction from STC datasheet values.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sdm::{
    find_mpp, open_circuit_voltage, short_circuit_current, translate_with_alpha, OperatingConditions,
    SdmParamsOperating, SdmParamsRef, BOLTZMANN, ELEMENTARY_CHARGE, KELVIN_OFFSET, T_REF_C,
};

/// Manufacturer datasheet values at STC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Datasheet {
    pub v_oc: f64,
    pub i_sc: f64,
    pub v_mp: f64,
    pub i_mp: f64,
    /// Short-circuit current temperature coefficient (A/°C).
    #[serde(default)]
    pub alpha_isc: f64,
    /// Open-circuit voltage temperature coefficient (V/°C).
    pub beta_voc: f64,
    pub cells_in_series: u32,
}

impl Datasheet {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.v_oc, self.i_sc, self.v_mp, self.i_mp, self.alpha_isc, self.beta_voc];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("datasheet values must be finite".into()));
        }
        if !(0.0 < self.v_mp && self.v_mp < self.v_oc) {
            return Err(Error::InvalidParams(format!("need 0 < v_mp < v_oc, got {} / {}", self.v_mp, self.v_oc)));
        }
        if !(0.0 < self.i_mp && self.i_mp < self.i_sc) {
            return Err(Error::InvalidParams(format!("need 0 < i_mp < i_sc, got {} / {}", self.i_mp, self.i_sc)));
        }
        if self.v_mp * self.i_mp >= self.v_oc * self.i_sc {
            return Err(Error::InvalidParams("v_mp*i_mp must be below v_oc*i_sc".into()));
        }
        if self.cells_in_series == 0 {
            return Err(Error::InvalidParams("cells_in_series must be >= 1".into()));
        }
        Ok(())
    }

    pub fn p_mp(&self) -> f64 {
        self.v_mp * self.i_mp
    }
}

const BETA_T_HIGH: f64 = 35.0;
const MAX_NEWTON_ITER: usize = 100;
const RESIDUAL_TARGET: f64 = 1e-13;

/// STC datasheet produced by the model itself; β_Voc from the 25/35 °C difference.
pub fn datasheet_from_params(params: &SdmParamsRef, cells_in_series: u32, alpha_isc: f64) -> Result<Datasheet> {
    let stc = OperatingConditions::stc();
    let op = translate_with_alpha(params, &stc, cells_in_series, alpha_isc);
    let mpp = find_mpp(&op)?;
    let v_oc = open_circuit_voltage(&op)?;
    let hot = translate_with_alpha(params, &OperatingConditions { g_poa: 1000.0, t_cell: BETA_T_HIGH }, cells_in_series, alpha_isc);
    let beta_voc = (open_circuit_voltage(&hot)? - v_oc) / (BETA_T_HIGH - T_REF_C);
    Ok(Datasheet {
        v_oc,
        i_sc: short_circuit_current(&op)?,
        v_mp: mpp.v,
        i_mp: mpp.i,
        alpha_isc,
        beta_voc,
        cells_in_series,
    })
}

fn thermal_voltage_per_cell() -> f64 {
    BOLTZMANN * (T_REF_C + KELVIN_OFFSET) / ELEMENTARY_CHARGE
}

/// Unknowns are `ln` of `[i_ph, i_0, r_s, r_sh, a_ref]`.
fn unpack(theta: &[f64]) -> [f64; 5] {
    [theta[0].exp(), theta[1].exp(), theta[2].exp(), theta[3].exp(), theta[4].exp()]
}

fn residuals(ds: &Datasheet, theta: &[f64]) -> Option<[f64; 5]> {
    let [i_ph, i_0, r_s, r_sh, a] = unpack(theta);
    if ![i_ph, i_0, r_s, r_sh, a].iter().all(|v| v.is_finite() && *v > 0.0) {
        return None;
    }
    let diode = |x: f64| i_ph - i_0 * ((x / a).min(700.0).exp() - 1.0) - x / r_sh;
    let scale = ds.i_sc;
    let r_sc = (diode(ds.i_sc * r_s) - ds.i_sc) / scale;
    let r_oc = diode(ds.v_oc) / scale;
    let x_mp = ds.v_mp + ds.i_mp * r_s;
    let r_mp = (diode(x_mp) - ds.i_mp) / scale;
    let cond = i_0 / a * (x_mp / a).min(700.0).exp() + 1.0 / r_sh;
    let r_dp = (ds.i_mp / ds.v_mp - cond / (1.0 + r_s * cond)) * ds.v_mp / scale;

    let op_at = |t_cell: f64| {
        let n = a / (f64::from(ds.cells_in_series) * thermal_voltage_per_cell());
        let p = SdmParamsRef { i_ph_ref: i_ph, i_0_ref: i_0, r_s, r_sh_ref: r_sh, n_diode: n };
        translate_with_alpha(&p, &OperatingConditions { g_poa: 1000.0, t_cell }, ds.cells_in_series, ds.alpha_isc)
    };
    let voc = |op: SdmParamsOperating| open_circuit_voltage(&op).ok();
    let dv = voc(op_at(BETA_T_HIGH))? - voc(op_at(T_REF_C))?;
    let r_beta = (dv - ds.beta_voc * (BETA_T_HIGH - T_REF_C)) / ds.v_oc;
    let r = [r_sc, r_oc, r_mp, r_dp, r_beta];
    r.iter().all(|v| v.is_finite()).then_some(r)
}

fn norm(r: &[f64; 5]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn damped_newton(ds: &Datasheet, mut theta: [f64; 5]) -> (Option<[f64; 5]>, f64) {
    let Some(mut r) = residuals(ds, &theta) else {
        return (None, f64::INFINITY);
    };
    let mut rn = norm(&r);
    for _ in 0..MAX_NEWTON_ITER {
        if rn < RESIDUAL_TARGET {
            return (Some(theta), rn);
        }
        let mut jac = DMatrix::<f64>::zeros(5, 5);
        for j in 0..5 {
            let h = 1e-7 * theta[j].abs().max(1.0);
            let mut tp = theta;
            let mut tm = theta;
            tp[j] += h;
            tm[j] -= h;
            let (Some(rp), Some(rm)) = (residuals(ds, &tp), residuals(ds, &tm)) else {
                return (None, rn);
            };
            for i in 0..5 {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let rhs = DVector::from_iterator(5, r.iter().map(|v| -v));
        let Some(step) = jac.clone().lu().solve(&rhs) else {
            return (None, rn);
        };
        // Cap the log-space step so one update cannot move a parameter by more than e^2.
        let max_step = step.amax();
        let mut lambda = if max_step > 2.0 { 2.0 / max_step } else { 1.0 };
        let mut improved = false;
        for _ in 0..30 {
            let mut trial = theta;
            for j in 0..5 {
                trial[j] += lambda * step[j];
            }
            if let Some(rt) = residuals(ds, &trial) {
                let tn = norm(&rt);
                if tn < rn {
                    theta = trial;
                    r = rt;
                    rn = tn;
                    improved = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if rn < RESIDUAL_TARGET * 1e3 {
        (Some(theta), rn)
    } else {
        (None, rn)
    }
}

fn seeds(ds: &Datasheet) -> Vec<[f64; 5]> {
    let vt = thermal_voltage_per_cell() * f64::from(ds.cells_in_series);
    let mut out = Vec::new();
    for n0 in [1.5, 1.1, 1.3, 1.0, 1.8, 0.8, 2.2] {
        for r_sh0 in [100.0, 1000.0, 20.0] {
            let a0 = n0 * vt;
            let i_ph0 = ds.i_sc;
            let i_00 = ds.i_sc * (-ds.v_oc / a0).exp();
            let mut r_s0 = (a0 * ((i_ph0 - ds.i_mp) / i_00).ln_1p() - ds.v_mp) / ds.i_mp;
            if !(r_s0.is_finite() && r_s0 > 0.0) {
                r_s0 = 0.1 * (ds.v_oc - ds.v_mp) / ds.i_mp;
            }
            out.push([i_ph0.ln(), i_00.ln(), r_s0.ln(), f64::ln(r_sh0), a0.ln()]);
        }
    }
    out
}

/// Solves the five STC conditions (short circuit, open circuit, maximum power
/// point, zero power slope at the MPP, and the Voc temperature coefficient)
/// for the reference parameters.
pub fn fit_desoto_from_datasheet(ds: &Datasheet) -> Result<SdmParamsRef> {
    ds.validate()?;
    let mut best_residual = f64::INFINITY;
    for seed in seeds(ds) {
        let (theta, rn) = damped_newton(ds, seed);
        best_residual = best_residual.min(rn);
        let Some(theta) = theta else { continue };
        let [i_ph, i_0, r_s, r_sh, a] = unpack(&theta);
        let n_diode = a / (f64::from(ds.cells_in_series) * thermal_voltage_per_cell());
        let Ok(params) = SdmParamsRef::new(i_ph, i_0, r_s, r_sh, n_diode) else { continue };
        if reproduces(ds, &params) {
            return Ok(params);
        }
    }
    Err(Error::Extraction {
        residual: best_residual,
        detail: format!("no seed converged for datasheet {ds:?}"),
    })
}

fn reproduces(ds: &Datasheet, params: &SdmParamsRef) -> bool {
    let Ok(model) = datasheet_from_params(params, ds.cells_in_series, ds.alpha_isc) else {
        return false;
    };
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    rel(model.i_sc, ds.i_sc) < 1e-3 && rel(model.v_oc, ds.v_oc) < 1e-3 && rel(model.p_mp(), ds.p_mp()) < 1e-3
}
