//! Measured quantities: anisotropic Sobolev norms, energy functionals,
//! conservation checks and the control functional used by the sweeps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ddrho, ddx, grad, lambda_s, trace_hs_norm, ScalarField, VectorField};
use crate::state::{
    isopycnal_height, stratification_report, BackgroundProfile, HydroState, NonHydroState, Params,
};

/// Anisotropic Sobolev index pair: `s` horizontal (possibly fractional),
/// `k <= s` vertical derivatives.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct NormSpec {
    pub s: f64,
    pub k: usize,
}

impl NormSpec {
    pub const L2: NormSpec = NormSpec { s: 0.0, k: 0 };

    pub fn new(s: f64, k: usize) -> Result<NormSpec> {
        if s < 0.0 || (k as f64) > s {
            return Err(Error::Validation {
                key: "norms".into(),
                message: format!("need 0 <= k <= s, got s = {s}, k = {k}"),
            });
        }
        Ok(NormSpec { s, k })
    }
}

/// `H^{s,k}` norm via the fractional multiplier form:
/// `||f||^2 = sum_{j <= k} || Lambda^{s-j} d_rho^j f ||_{L2}^2`.
pub fn hsk_norm(f: &ScalarField, spec: NormSpec) -> f64 {
    let mut total = 0.0;
    let mut deriv = f.clone();
    for j in 0..=spec.k {
        if j > 0 {
            deriv = ddrho(&deriv);
        }
        let weighted = lambda_s(&deriv, spec.s - j as f64);
        total += weighted.l2_norm_sq();
    }
    total.sqrt()
}

/// Integer-derivative form of the same norm (cross-check; equivalent up to
/// harmless factors): `sum_{j<=k} sum_{|a| <= s-j} ||d_x^a d_rho^j f||^2`.
pub fn hsk_norm_integer(f: &ScalarField, s: usize, k: usize) -> f64 {
    assert!(k <= s);
    let d = f.grid.d;
    let mut total = 0.0;
    let mut rho_deriv = f.clone();
    for j in 0..=k {
        if j > 0 {
            rho_deriv = ddrho(&rho_deriv);
        }
        let max_order = s - j;
        // enumerate multi-indices by total order
        let mut level: Vec<ScalarField> = vec![rho_deriv.clone()];
        total += rho_deriv.l2_norm_sq();
        for _ in 1..=max_order {
            let mut next = Vec::new();
            if d == 1 {
                next.push(ddx(&level[0], 0));
            } else {
                // derivatives of order n: d_x^i d_y^(n-i); differentiate the
                // previous level's pure-x lead in x, every member in y.
                next.push(ddx(&level[0], 0));
                for fld in &level {
                    next.push(ddx(fld, 1));
                }
            }
            for fld in &next {
                total += fld.l2_norm_sq();
            }
            level = next;
        }
    }
    total.sqrt()
}

/// `H^{s,k}` norm of a vector field (root of the component sum of squares).
pub fn hsk_norm_vec(v: &VectorField, spec: NormSpec) -> f64 {
    v.components
        .iter()
        .map(|c| hsk_norm(c, spec).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `H^s` norm of the surface trace (slice at `rho0`).
pub fn surface_trace_norm(f: &ScalarField, s: f64) -> f64 {
    trace_hs_norm(f, 0, s)
}

/// Hydrostatic energy functional:
/// `E = 1/2 iint Hdot^2 + rho (hbar + h) |udot|^2  +  rho0/2 int Hdot^2 at rho0`.
pub fn energy_hydro(
    height_dot: &ScalarField,
    u_dot: &VectorField,
    h: &ScalarField,
    profile: &BackgroundProfile,
) -> f64 {
    let g = &height_dot.grid;
    let da = g.dx_area();
    let mut total = 0.0;
    for j in 0..g.n_rho() {
        let w = g.rho_weight(j) * da;
        let rho = g.rho_nodes[j];
        let hb = profile.hbar[j];
        let mut row = 0.0;
        for i in 0..g.n_h() {
            let hd = height_dot.values[(j, i)];
            let mut usq = 0.0;
            for c in &u_dot.components {
                usq += c.values[(j, i)] * c.values[(j, i)];
            }
            row += hd * hd + rho * (hb + h.values[(j, i)]) * usq;
        }
        total += 0.5 * w * row;
    }
    let rho0 = g.rho0();
    let mut trace = 0.0;
    for i in 0..g.n_h() {
        let hd = height_dot.values[(0, i)];
        trace += hd * hd;
    }
    total + 0.5 * rho0 * da * trace
}

/// Non-hydrostatic energy: the hydrostatic functional plus
/// `mu/2 iint rho (hbar + h) wdot^2`. Reduces exactly to [`energy_hydro`]
/// at `mu = 0`.
pub fn energy_nonhydro(
    height_dot: &ScalarField,
    u_dot: &VectorField,
    w_dot: &ScalarField,
    h: &ScalarField,
    profile: &BackgroundProfile,
    params: &Params,
) -> f64 {
    let base = energy_hydro(height_dot, u_dot, h, profile);
    if params.mu == 0.0 {
        return base;
    }
    let g = &height_dot.grid;
    let da = g.dx_area();
    let mut wterm = 0.0;
    for j in 0..g.n_rho() {
        let w = g.rho_weight(j) * da;
        let rho = g.rho_nodes[j];
        let hb = profile.hbar[j];
        let mut row = 0.0;
        for i in 0..g.n_h() {
            let wd = w_dot.values[(j, i)];
            row += rho * (hb + h.values[(j, i)]) * wd * wd;
        }
        wterm += 0.5 * params.mu * w * row;
    }
    base + wterm
}

/// Total mass `iint h dx drho` by the shared quadrature.
pub fn total_mass(h: &ScalarField) -> f64 {
    h.integral()
}

/// Pointwise-in-time control functional:
/// `||H|| + ||u|| + mu^(1/2) ||w|| + ||H at rho0|| + kappa^(1/2) ||h||
///  + mu^(1/2) kappa^(1/2) ||grad H||`, all in `H^{s,k}` (trace in `H^s`).
pub fn control_functional(
    h: &ScalarField,
    u: &VectorField,
    w: Option<&ScalarField>,
    params: &Params,
    spec: NormSpec,
) -> f64 {
    let height = isopycnal_height(h);
    let mut value = hsk_norm(&height, spec)
        + hsk_norm_vec(u, spec)
        + surface_trace_norm(&height, spec.s)
        + params.kappa.sqrt() * hsk_norm(h, spec);
    if let Some(w) = w {
        value += params.mu.sqrt() * hsk_norm(w, spec);
    }
    if params.mu > 0.0 && params.kappa > 0.0 {
        let gh = grad(&height);
        value += (params.mu * params.kappa).sqrt() * hsk_norm_vec(&gh, spec);
    }
    value
}

/// One line of the diagnostics stream. Field order is the serialization
/// order; all values are finite unless this is a termination record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub height_norm: f64,
    pub u_norm: f64,
    pub h_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_norm: Option<f64>,
    pub surface_norm: f64,
    pub energy_hydro: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy_nonhydro: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub div_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bottom_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id_eta_residual: Option<f64>,
    pub min_thickness: f64,
    pub max_thickness: f64,
    pub control: f64,
}

pub fn record_hydro(
    state: &HydroState,
    profile: &BackgroundProfile,
    params: &Params,
    spec: NormSpec,
) -> DiagnosticsRecord {
    let height = isopycnal_height(&state.h);
    let strat = stratification_report(&state.h, profile, params);
    DiagnosticsRecord {
        t: state.t,
        mass: total_mass(&state.h),
        height_norm: hsk_norm(&height, spec),
        u_norm: hsk_norm_vec(&state.u, spec),
        h_norm: hsk_norm(&state.h, spec),
        w_norm: None,
        surface_norm: surface_trace_norm(&height, spec.s),
        energy_hydro: energy_hydro(&height, &state.u, &state.h, profile),
        energy_nonhydro: None,
        div_residual: None,
        bottom_w: None,
        id_eta_residual: None,
        min_thickness: strat.min_thickness,
        max_thickness: strat.max_thickness,
        control: control_functional(&state.h, &state.u, None, params, spec),
    }
}

pub fn record_nonhydro(
    state: &NonHydroState,
    profile: &BackgroundProfile,
    params: &Params,
    spec: NormSpec,
    constraint: (f64, f64),
    id_eta: Option<f64>,
) -> DiagnosticsRecord {
    let height = isopycnal_height(&state.h);
    let strat = stratification_report(&state.h, profile, params);
    DiagnosticsRecord {
        t: state.t,
        mass: total_mass(&state.h),
        height_norm: hsk_norm(&height, spec),
        u_norm: hsk_norm_vec(&state.u, spec),
        h_norm: hsk_norm(&state.h, spec),
        w_norm: Some(hsk_norm(&state.w, spec)),
        surface_norm: surface_trace_norm(&height, spec.s),
        energy_hydro: energy_hydro(&height, &state.u, &state.h, profile),
        energy_nonhydro: Some(energy_nonhydro(
            &height, &state.u, &state.w, &state.h, profile, params,
        )),
        div_residual: Some(constraint.0),
        bottom_w: Some(constraint.1),
        id_eta_residual: id_eta,
        min_thickness: strat.min_thickness,
        max_thickness: strat.max_thickness,
        control: control_functional(&state.h, &state.u, Some(&state.w), params, spec),
    }
}
