//! Time integration of the hydrostatic system and of its viscosity-regularized
//! variant, plus the linearized-about-rest system used by the energy tests.
//!
//! Diffusion (`kappa` on `h`, `nu` on `u`) is applied exactly in spectral
//! space through an integrating factor; the remaining terms advance with
//! classical four-stage Runge-Kutta.

use serde::{Deserialize, Serialize};

use crate::bolus::ustar;
use crate::diagnostics::{record_hydro, DiagnosticsRecord, NormSpec};
use crate::error::{Error, Result};
use crate::field::{
    ddx, div, heat_propagate, integrate_rho_lower_adjoint, integrate_rho_upper, ScalarField,
    VectorField,
};
use crate::montgomery::hydrostatic_force;
use crate::state::{guard_stratification, BackgroundProfile, HydroState, Params};

/// Explicit (non-diffusive) parts of the right sides.
#[derive(Clone, Debug)]
pub struct HydroTendency {
    pub dh: ScalarField,
    pub du: VectorField,
}

/// Nonlinear tendencies of the hydrostatic system:
/// `dh = -div((hbar+h)(ubar+u))`,
/// `du = -((ubar+u+u*) . grad) u - (1/rho) grad psi`.
/// The diffusion terms are handled by the integrating factor, not here.
pub fn rhs_hydro(
    state: &HydroState,
    profile: &BackgroundProfile,
    params: &Params,
) -> Result<HydroTendency> {
    guard_stratification(&state.h, profile, params, state.t)?;
    let grid = state.grid();
    let thickness = profile.hbar_field(grid).add(&state.h);
    let total_u = profile.ubar_field(grid).add(&state.u);

    let flux = total_u.map(|c| thickness.mul_dealiased(c));
    let dh = div(&flux).scale(-1.0);

    let adv = total_u.add(&ustar(&state.h, profile, params)?);
    let force = hydrostatic_force(&state.h);
    let du = VectorField {
        components: (0..grid.d)
            .map(|c| {
                let mut advected = ScalarField::zeros(grid);
                for (i, a) in adv.components.iter().enumerate() {
                    advected = advected.add(&a.mul_dealiased(&ddx(&state.u.components[c], i)));
                }
                advected.scale(-1.0).sub(&force.components[c])
            })
            .collect(),
    };
    Ok(HydroTendency { dh, du })
}

/// Linearized system about the rest state (zero shear, constant `hbar`),
/// whose quadratic energy is exactly conserved when `kappa = nu = 0`:
/// `dh = -hbar div u`,
/// `du = -(rho0/rho) grad H at rho0 - (1/rho) int_rho0^rho grad H`,
/// with `H = int_rho^rho1 h` and the vertical integral taken as the exact
/// discrete adjoint of the height quadrature.
pub fn rhs_hydro_linearized(
    state: &HydroState,
    profile: &BackgroundProfile,
    _params: &Params,
) -> Result<HydroTendency> {
    let grid = state.grid();
    let hbar0 = profile.hbar[0];
    let rest = profile.hbar.iter().all(|v| *v == hbar0)
        && profile.ubar.iter().flatten().all(|v| *v == 0.0);
    if !rest {
        return Err(Error::InvalidOperation(
            "linearized tendencies require a rest background with constant hbar".into(),
        ));
    }

    let dh = div(&state.u).scale(-hbar0);

    let height = integrate_rho_upper(&state.h);
    let rho0 = grid.rho0();
    let du = VectorField {
        components: (0..grid.d)
            .map(|c| {
                let gh = ddx(&height, c);
                let surface = gh.slice_rho(0);
                let mut out = integrate_rho_lower_adjoint(&gh);
                for j in 0..grid.n_rho() {
                    let inv_rho = 1.0 / grid.rho_nodes[j];
                    for i in 0..grid.n_h() {
                        out.values[(j, i)] =
                            -inv_rho * (rho0 * surface[i] + out.values[(j, i)]);
                    }
                }
                out
            })
            .collect(),
    };
    Ok(HydroTendency { dh, du })
}

fn propagate(state: &HydroState, params: &Params, tau: f64) -> HydroState {
    HydroState {
        t: state.t,
        h: heat_propagate(&state.h, params.kappa, tau),
        u: state.u.map(|c| heat_propagate(c, params.nu, tau)),
    }
}

fn propagate_tendency(k: &HydroTendency, params: &Params, tau: f64) -> HydroTendency {
    HydroTendency {
        dh: heat_propagate(&k.dh, params.kappa, tau),
        du: k.du.map(|c| heat_propagate(c, params.nu, tau)),
    }
}

fn add_scaled(state: &HydroState, k: &HydroTendency, c: f64) -> HydroState {
    let mut out = state.clone();
    out.h.axpy(c, &k.dh);
    out.u.axpy(c, &k.du);
    out
}

pub(crate) fn check_cfl(speed: f64, k_max: f64, dt: f64, cfl_limit: f64) -> Result<()> {
    if speed > 0.0 {
        let dt_max = cfl_limit / (speed * k_max);
        if dt > dt_max {
            return Err(Error::Cfl { dt, dt_max, speed });
        }
    }
    Ok(())
}

/// Integrating-factor Runge-Kutta step shared by all solvers in this module.
fn if_rk4_step<R>(state: &HydroState, params: &Params, dt: f64, rhs: R) -> Result<HydroState>
where
    R: Fn(&HydroState) -> Result<HydroTendency>,
{
    let half = dt / 2.0;
    let k1 = rhs(state)?;

    let mut y2 = propagate(&add_scaled(state, &k1, half), params, half);
    y2.t = state.t + half;
    let k2 = rhs(&y2)?;

    let mut y3 = add_scaled(&propagate(state, params, half), &k2, half);
    y3.t = state.t + half;
    let k3 = rhs(&y3)?;

    let full = propagate(state, params, dt);
    let mut y4 = add_scaled(&full, &propagate_tendency(&k3, params, half), dt);
    y4.t = state.t + dt;
    let k4 = rhs(&y4)?;

    let mut next = full;
    next.axpy_tendency(
        dt / 6.0,
        &propagate_tendency(&k1, params, dt),
        &propagate_tendency(&k2, params, half),
        &propagate_tendency(&k3, params, half),
        &k4,
    );
    next.t = state.t + dt;
    Ok(next)
}

impl HydroState {
    fn axpy_tendency(
        &mut self,
        c: f64,
        k1: &HydroTendency,
        k2: &HydroTendency,
        k3: &HydroTendency,
        k4: &HydroTendency,
    ) {
        self.h.axpy(c, &k1.dh);
        self.h.axpy(2.0 * c, &k2.dh);
        self.h.axpy(2.0 * c, &k3.dh);
        self.h.axpy(c, &k4.dh);
        self.u.axpy(c, &k1.du);
        self.u.axpy(2.0 * c, &k2.du);
        self.u.axpy(2.0 * c, &k3.du);
        self.u.axpy(c, &k4.du);
    }
}

/// One hydrostatic step. Refuses the step on CFL violation; fails on
/// stratification loss after the step.
pub fn step_hydro(
    state: &HydroState,
    profile: &BackgroundProfile,
    params: &Params,
    dt: f64,
) -> Result<HydroState> {
    assert!(dt > 0.0);
    let speed = state.u.max_abs().max(profile.max_ubar());
    check_cfl(speed, state.grid().k_max(), dt, params.cfl_limit)?;
    let next = if_rk4_step(state, params, dt, |s| rhs_hydro(s, profile, params))?;
    guard_stratification(&next.h, profile, params, next.t)?;
    Ok(next)
}

/// One step of the linearized-about-rest system (energy test harness).
pub fn step_hydro_linearized(
    state: &HydroState,
    profile: &BackgroundProfile,
    params: &Params,
    dt: f64,
) -> Result<HydroState> {
    assert!(dt > 0.0);
    if_rk4_step(state, params, dt, |s| rhs_hydro_linearized(s, profile, params))
}

/// How a run ended; appended to the diagnostics stream as a labeled record.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Termination {
    Completed { t: f64, steps: usize },
    GuardFailure { t: f64, detail: String },
    CflViolation { t: f64, detail: String },
    SolverFailure { t: f64, detail: String },
}

impl Termination {
    pub fn from_error(err: &Error, t: f64) -> Termination {
        match err {
            Error::Stratification { .. } => Termination::GuardFailure {
                t,
                detail: err.to_string(),
            },
            Error::Cfl { .. } => Termination::CflViolation {
                t,
                detail: err.to_string(),
            },
            Error::SolverDiverged { .. } => Termination::SolverFailure {
                t,
                detail: err.to_string(),
            },
            other => Termination::GuardFailure {
                t,
                detail: other.to_string(),
            },
        }
    }

    pub fn completed(&self) -> bool {
        matches!(self, Termination::Completed { .. })
    }
}

/// Run output: sampled states at output instants plus the diagnostics stream.
#[derive(Clone, Debug)]
pub struct Trajectory<S> {
    pub samples: Vec<S>,
    pub records: Vec<DiagnosticsRecord>,
    pub termination: Termination,
}

/// Integrate `n_steps` steps, emitting one diagnostics record every
/// `output_stride` steps (plus the initial and final instants). A guard or
/// solver failure halts the run and is recorded, not propagated.
pub fn run_hydro(
    state0: HydroState,
    profile: &BackgroundProfile,
    params: &Params,
    dt: f64,
    n_steps: usize,
    output_stride: usize,
    norm_spec: NormSpec,
    mut sink: impl FnMut(&DiagnosticsRecord) -> Result<()>,
) -> Result<Trajectory<HydroState>> {
    let stride = output_stride.max(1);
    let mut state = state0;
    let mut samples = Vec::new();
    let mut records = Vec::new();

    let rec = record_hydro(&state, profile, params, norm_spec);
    sink(&rec)?;
    records.push(rec);
    samples.push(state.clone());

    for step in 0..n_steps {
        match step_hydro(&state, profile, params, dt) {
            Ok(next) => state = next,
            Err(err) => {
                return Ok(Trajectory {
                    samples,
                    records,
                    termination: Termination::from_error(&err, state.t),
                });
            }
        }
        if (step + 1) % stride == 0 || step + 1 == n_steps {
            let rec = record_hydro(&state, profile, params, norm_spec);
            sink(&rec)?;
            records.push(rec);
            samples.push(state.clone());
        }
    }
    Ok(Trajectory {
        samples,
        records,
        termination: Termination::Completed {
            t: state.t,
            steps: n_steps,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::total_mass;
    use crate::grid::Grid;
    use std::f64::consts::TAU;
    use std::sync::Arc;

    fn setup(kappa: f64, nu: f64) -> (Arc<Grid>, BackgroundProfile, Params) {
        let g = Grid::new_1d(32, TAU, 12, 1.0, 2.0).unwrap();
        let profile = BackgroundProfile::uniform(&g, 1.0);
        let mut params = Params::defaults(1.0, 2.0);
        params.kappa = kappa;
        params.nu = nu;
        (g, profile, params)
    }

    #[test]
    fn rest_state_is_equilibrium() {
        let (g, profile, params) = setup(0.1, 0.0);
        let state = HydroState::rest(&g);
        let tend = rhs_hydro(&state, &profile, &params).unwrap();
        assert!(tend.dh.max_abs() < 1e-14);
        assert!(tend.du.max_abs() < 1e-14);
    }

    #[test]
    fn shear_background_is_equilibrium() {
        let (g, _, params) = setup(0.1, 0.0);
        let mut profile = BackgroundProfile::uniform(&g, 1.0);
        profile.ubar[0] = g.rho_nodes.iter().map(|r| 0.5 * (2.0 * r).sin()).collect();
        let state = HydroState::rest(&g);
        let tend = rhs_hydro(&state, &profile, &params).unwrap();
        assert!(tend.dh.max_abs() < 1e-13);
        assert!(tend.du.max_abs() < 1e-13);
    }

    #[test]
    fn single_mode_hand_evaluation() {
        // h = 0, u = eps sin(x), kappa = 0, hbar = 1:
        // dh = -eps cos(x), du = -eps^2 sin(x) cos(x)
        let (g, profile, params) = setup(0.0, 0.0);
        let eps = 0.05;
        let state = HydroState {
            t: 0.0,
            h: ScalarField::zeros(&g),
            u: VectorField {
                components: vec![ScalarField::from_fn(&g, |x, _, _| eps * x.sin())],
            },
        };
        let tend = rhs_hydro(&state, &profile, &params).unwrap();
        let want_dh = ScalarField::from_fn(&g, |x, _, _| -eps * x.cos());
        let want_du = ScalarField::from_fn(&g, |x, _, _| -eps * eps * x.sin() * x.cos());
        assert!(tend.dh.sub(&want_dh).max_abs() < 1e-13);
        assert!(tend.du.components[0].sub(&want_du).max_abs() < 1e-13);
    }

    #[test]
    fn dh_has_zero_horizontal_mean() {
        let (g, profile, params) = setup(0.2, 0.0);
        let state = HydroState {
            t: 0.0,
            h: ScalarField::from_fn(&g, |x, _, r| 0.1 * x.cos() * (1.0 + 0.2 * r)),
            u: VectorField {
                components: vec![ScalarField::from_fn(&g, |x, _, _| 0.1 * x.sin())],
            },
        };
        let tend = rhs_hydro(&state, &profile, &params).unwrap();
        for j in 0..g.n_rho() {
            let mean: f64 = tend.dh.values.row(j).iter().sum::<f64>() / g.n_h() as f64;
            assert!(mean.abs() < 1e-13, "mean {mean} at node {j}");
        }
    }

    #[test]
    fn linearized_tendency_oracles() {
        let (g, profile, params) = setup(0.0, 0.0);
        let zero = HydroState::rest(&g);
        let t0 = rhs_hydro_linearized(&zero, &profile, &params).unwrap();
        assert_eq!(t0.dh.max_abs(), 0.0);
        assert_eq!(t0.du.max_abs(), 0.0);

        // u = sin(x), h = 0: dh = -cos(x), rho-independent
        let state = HydroState {
            t: 0.0,
            h: ScalarField::zeros(&g),
            u: VectorField {
                components: vec![ScalarField::from_fn(&g, |x, _, _| x.sin())],
            },
        };
        let tend = rhs_hydro_linearized(&state, &profile, &params).unwrap();
        let want = ScalarField::from_fn(&g, |x, _, _| -x.cos());
        assert!(tend.dh.sub(&want).max_abs() < 1e-12);

        // h = cos(x), u = 0:
        // du = (sin(x)/rho) [rho0(rho1-rho0) + rho1(rho-rho0) - (rho^2-rho0^2)/2]
        // (interior nodes; boundary nodes carry the adjoint quadrature).
        let state = HydroState {
            t: 0.0,
            h: ScalarField::from_fn(&g, |x, _, _| x.cos()),
            u: VectorField::zeros(&g),
        };
        let tend = rhs_hydro_linearized(&state, &profile, &params).unwrap();
        let want = ScalarField::from_fn(&g, |x, _, r| {
            x.sin() / r * (1.0 + 2.0 * (r - 1.0) - (r * r - 1.0) / 2.0)
        });
        let mut interior_err = 0.0f64;
        for j in 1..g.n_rho() - 1 {
            for i in 0..g.n_h() {
                interior_err = interior_err
                    .max((tend.du.components[0].values[(j, i)] - want.values[(j, i)]).abs());
            }
        }
        assert!(interior_err < 1e-12, "err {interior_err}");

        // non-rest background is a misuse
        let mut sheared = profile.clone();
        sheared.ubar[0][2] = 0.3;
        assert!(rhs_hydro_linearized(&state, &sheared, &params).is_err());
    }

    #[test]
    fn step_keeps_rest_state() {
        let (g, profile, params) = setup(0.1, 1e-3);
        let state = HydroState::rest(&g);
        let next = step_hydro(&state, &profile, &params, 0.01).unwrap();
        assert!(next.h.max_abs() < 1e-15);
        assert!(next.u.max_abs() < 1e-15);
        assert_eq!(next.t, 0.01);
    }

    #[test]
    fn pure_diffusion_is_exact_per_step() {
        // With the nonlinear tendencies disabled the integrating factor must
        // decay each h mode by exactly the heat factor.
        let (g, _, mut params) = setup(0.3, 0.0);
        params.nu = 0.0;
        let state = HydroState {
            t: 0.0,
            h: ScalarField::from_fn(&g, |x, _, _| 0.05 * (2.0 * x).cos()),
            u: VectorField::zeros(&g),
        };
        let dt = 0.07;
        let zero_rhs = |s: &HydroState| {
            Ok(HydroTendency {
                dh: ScalarField::zeros(s.grid()),
                du: VectorField::zeros(s.grid()),
            })
        };
        let next = if_rk4_step(&state, &params, dt, zero_rhs).unwrap();
        let factor = (-params.kappa * 4.0 * dt).exp();
        let want = state.h.scale(factor);
        assert!(next.h.sub(&want).max_abs() < 1e-12);
    }

    #[test]
    fn time_refinement_fourth_order() {
        let (g, profile, params) = setup(0.1, 0.0);
        let state0 = HydroState {
            t: 0.0,
            h: ScalarField::from_fn(&g, |x, _, _| 0.1 * x.cos()),
            u: VectorField {
                components: vec![ScalarField::from_fn(&g, |x, _, _| 0.1 * x.sin())],
            },
        };
        let advance = |dt: f64, n: usize| -> HydroState {
            let mut s = state0.clone();
            for _ in 0..n {
                s = step_hydro(&s, &profile, &params, dt).unwrap();
            }
            s
        };
        let t_final = 0.128;
        let reference = advance(t_final / 64.0, 64);
        let coarse = advance(t_final / 4.0, 4);
        let fine = advance(t_final / 8.0, 8);
        let ec = coarse.h.sub(&reference.h).max_abs()
            + coarse.u.components[0].sub(&reference.u.components[0]).max_abs();
        let ef = fine.h.sub(&reference.h).max_abs()
            + fine.u.components[0].sub(&reference.u.components[0]).max_abs();
        let order = (ec / ef).log2();
        assert!((order - 4.0).abs() < 0.3, "order {order}");
    }

    #[test]
    fn cfl_violation_refuses_step() {
        let (g, profile, params) = setup(0.1, 0.0);
        let state = HydroState {
            t: 0.0,
            h: ScalarField::zeros(&g),
            u: VectorField {
                components: vec![ScalarField::constant(&g, 1.0)],
            },
        };
        // k_max = 16, speed 1: dt_max = 0.05
        let err = step_hydro(&state, &profile, &params, 0.5).unwrap_err();
        assert!(matches!(err, Error::Cfl { .. }));
    }

    #[test]
    fn run_zero_steps_echoes_initial_state() {
        let (g, profile, params) = setup(0.1, 0.0);
        let state = HydroState::rest(&g);
        let traj = run_hydro(
            state, &profile, &params, 0.01, 0, 5, NormSpec::L2, |_| Ok(()),
        )
        .unwrap();
        assert_eq!(traj.records.len(), 1);
        assert_eq!(traj.samples.len(), 1);
        assert!(traj.termination.completed());
    }

    #[test]
    fn run_rest_state_constant_diagnostics() {
        let (g, profile, params) = setup(0.1, 0.0);
        let traj = run_hydro(
            HydroState::rest(&g),
            &profile,
            &params,
            0.01,
            100,
            10,
            NormSpec::L2,
            |_| Ok(()),
        )
        .unwrap();
        for rec in &traj.records {
            assert_eq!(rec.mass, 0.0);
            assert_eq!(rec.u_norm, 0.0);
            assert_eq!(rec.energy_hydro, 0.0);
        }
    }

    #[test]
    fn run_conserves_mass() {
        let (g, profile, params) = setup(0.1, 0.0);
        let state = HydroState {
            t: 0.0,
            h: ScalarField::from_fn(&g, |x, _, _| 0.1 * x.cos()),
            u: VectorField {
                components: vec![ScalarField::from_fn(&g, |x, _, _| 0.1 * x.sin())],
            },
        };
        let m0 = total_mass(&state.h);
        let traj = run_hydro(
            state, &profile, &params, 5e-3, 200, 20, NormSpec::L2, |_| Ok(()),
        )
        .unwrap();
        assert!(traj.termination.completed());
        let omega = TAU; // |Omega| = Lx * (rho1 - rho0)
        for rec in &traj.records {
            assert!((rec.mass - m0).abs() / omega < 1e-11, "drift {}", rec.mass - m0);
        }
    }

    #[test]
    fn guard_failure_recorded_not_propagated() {
        let (g, profile, mut params) = setup(0.0, 0.0);
        params.h_floor = 0.95; // unreasonably strict floor forces a guard trip
        let state = HydroState {
            t: 0.0,
            h: ScalarField::from_fn(&g, |x, _, _| 0.04 * x.cos()),
            u: VectorField {
                components: vec![ScalarField::from_fn(&g, |x, _, _| 0.4 * x.sin())],
            },
        };
        let traj = run_hydro(
            state, &profile, &params, 1e-3, 2000, 50, NormSpec::L2, |_| Ok(()),
        )
        .unwrap();
        assert!(!traj.termination.completed());
    }
}
