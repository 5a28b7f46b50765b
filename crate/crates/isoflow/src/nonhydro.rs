//! Time integration of the reformulated non-hydrostatic system, with an
//! elliptic pressure solve at every Runge-Kutta stage.
//!
//! The vertical velocity is prognostic; the incompressibility constraint is
//! measured along the trajectory, never re-imposed, so constraint drift is a
//! direct check of the formulation.

use crate::bolus::ustar;
use crate::diagnostics::{record_nonhydro, DiagnosticsRecord, NormSpec};
use crate::error::Result;
use crate::field::{ddrho, ddx, div, grad, heat_propagate, laplacian, ScalarField, VectorField};
use crate::hydro::{check_cfl, Termination, Trajectory};
use crate::pressure::{build_discretization, solve_pressure_with, PressureSolution};
use crate::state::{
    guard_stratification, isopycnal_height, BackgroundProfile, NonHydroState, Params,
};

/// Explicit tendencies of the non-hydrostatic system.
#[derive(Clone, Debug)]
pub struct NonHydroTendency {
    pub dh: ScalarField,
    pub du: VectorField,
    pub dw: ScalarField,
}

/// Tendencies with the pressure from the stage solve:
/// `dh = -div((hbar+h)(ubar+u))`,
/// `du = -((ubar+u+u*) . grad) u - (1/rho) grad P - (1 + defect) grad H`,
/// `dw = -((ubar+u+u*) . grad) w + defect / mu`,
/// where `defect = (d_rho P - rho h)/(rho (hbar+h))`. The `kappa` diffusion
/// on `h` is handled by the integrating factor.
pub fn rhs_nonhydro(
    state: &NonHydroState,
    profile: &BackgroundProfile,
    params: &Params,
    warm_start: Option<&ScalarField>,
) -> Result<(NonHydroTendency, PressureSolution)> {
    guard_stratification(&state.h, profile, params, state.t)?;
    let grid = state.grid();
    let disc = build_discretization(state, profile, params)?;
    let sol = solve_pressure_with(&disc, state, profile, params, warm_start)?;
    let (force_u, force_w) = crate::pressure::gradient_force(&sol, state, profile, params)?;

    let thickness = profile.hbar_field(grid).add(&state.h);
    let total_u = profile.ubar_field(grid).add(&state.u);
    let flux = total_u.map(|c| thickness.mul_dealiased(c));
    let dh = div(&flux).scale(-1.0);

    let adv = total_u.add(&ustar(&state.h, profile, params)?);
    let du = VectorField {
        components: (0..grid.d)
            .map(|c| {
                let mut advected = ScalarField::zeros(grid);
                for (i, a) in adv.components.iter().enumerate() {
                    advected = advected.add(&a.mul_dealiased(&ddx(&state.u.components[c], i)));
                }
                advected.scale(-1.0).sub(&force_u.components[c])
            })
            .collect(),
    };

    let mut adv_w = ScalarField::zeros(grid);
    for (i, a) in adv.components.iter().enumerate() {
        adv_w = adv_w.add(&a.mul_dealiased(&ddx(&state.w, i)));
    }
    let dw = adv_w.scale(-1.0).add(&force_w);

    Ok((NonHydroTendency { dh, du, dw }, sol))
}

fn propagate(state: &NonHydroState, params: &Params, tau: f64) -> NonHydroState {
    NonHydroState {
        t: state.t,
        h: heat_propagate(&state.h, params.kappa, tau),
        u: state.u.clone(),
        w: state.w.clone(),
    }
}

fn propagate_tendency(k: &NonHydroTendency, params: &Params, tau: f64) -> NonHydroTendency {
    NonHydroTendency {
        dh: heat_propagate(&k.dh, params.kappa, tau),
        du: k.du.clone(),
        dw: k.dw.clone(),
    }
}

fn add_scaled(state: &NonHydroState, k: &NonHydroTendency, c: f64) -> NonHydroState {
    let mut out = state.clone();
    out.h.axpy(c, &k.dh);
    out.u.axpy(c, &k.du);
    out.w.axpy(c, &k.dw);
    out
}

/// Internal-wave speed estimate used by the CFL check.
pub fn wave_speed(state: &NonHydroState, profile: &BackgroundProfile) -> f64 {
    let grid = state.grid();
    let mut max_thickness = 0.0f64;
    for j in 0..grid.n_rho() {
        for &v in state.h.values.row(j) {
            max_thickness = max_thickness.max(profile.hbar[j] + v);
        }
    }
    (grid.rho1() * max_thickness / grid.rho0()).sqrt()
}

/// One non-hydrostatic step: four-stage Runge-Kutta with an exact
/// integrating factor for the thickness diffusion and one pressure solve
/// per stage (warm-started from the previous stage).
pub fn step_nonhydro(
    state: &NonHydroState,
    profile: &BackgroundProfile,
    params: &Params,
    dt: f64,
    warm: &mut Option<ScalarField>,
) -> Result<NonHydroState> {
    assert!(dt > 0.0);
    let speed = state
        .u
        .max_abs()
        .max(profile.max_ubar())
        .max(wave_speed(state, profile));
    check_cfl(speed, state.grid().k_max(), dt, params.cfl_limit)?;

    let half = dt / 2.0;
    let (k1, sol1) = rhs_nonhydro(state, profile, params, warm.as_ref())?;
    *warm = Some(sol1.p);

    let mut y2 = propagate(&add_scaled(state, &k1, half), params, half);
    y2.t = state.t + half;
    let (k2, sol2) = rhs_nonhydro(&y2, profile, params, warm.as_ref())?;
    *warm = Some(sol2.p);

    let mut y3 = add_scaled(&propagate(state, params, half), &k2, half);
    y3.t = state.t + half;
    let (k3, sol3) = rhs_nonhydro(&y3, profile, params, warm.as_ref())?;
    *warm = Some(sol3.p);

    let full = propagate(state, params, dt);
    let mut y4 = add_scaled(&full, &propagate_tendency(&k3, params, half), dt);
    y4.t = state.t + dt;
    let (k4, sol4) = rhs_nonhydro(&y4, profile, params, warm.as_ref())?;
    *warm = Some(sol4.p);

    let mut next = full;
    let c = dt / 6.0;
    let k1p = propagate_tendency(&k1, params, dt);
    let k2p = propagate_tendency(&k2, params, half);
    let k3p = propagate_tendency(&k3, params, half);
    next.h.axpy(c, &k1p.dh);
    next.h.axpy(2.0 * c, &k2p.dh);
    next.h.axpy(2.0 * c, &k3p.dh);
    next.h.axpy(c, &k4.dh);
    next.u.axpy(c, &k1p.du);
    next.u.axpy(2.0 * c, &k2p.du);
    next.u.axpy(2.0 * c, &k3p.du);
    next.u.axpy(c, &k4.du);
    next.w.axpy(c, &k1p.dw);
    next.w.axpy(2.0 * c, &k2p.dw);
    next.w.axpy(2.0 * c, &k3p.dw);
    next.w.axpy(c, &k4.dw);
    next.t = state.t + dt;

    guard_stratification(&next.h, profile, params, next.t)?;
    Ok(next)
}

/// Discrete L2 norms of the incompressibility residual
/// `-(hbar+h) div u - grad H . (ubar' + d_rho u) + d_rho w`
/// and of the bottom trace of `w`.
pub fn constraint_residual(state: &NonHydroState, profile: &BackgroundProfile) -> (f64, f64) {
    let grid = state.grid();
    let thickness = profile.hbar_field(grid).add(&state.h);
    let height = isopycnal_height(&state.h);
    let shear = profile.ubar_prime(grid).add(&state.u.map(ddrho));
    let residual = thickness
        .mul(&div(&state.u))
        .add(&grad(&height).dot(&shear))
        .scale(-1.0)
        .add(&ddrho(&state.w));
    let div_norm = residual.l2_norm();

    let da = grid.dx_area();
    let mut bottom = 0.0;
    for &v in state.w.values.row(grid.nrho) {
        bottom += v * v;
    }
    (div_norm, (bottom * da).sqrt())
}

/// Finite-difference-in-time residual of the height transport identity
/// `d_t H + (ubar + u) . grad H - w = kappa lap H` between two states.
pub fn id_eta_residual(
    prev: &NonHydroState,
    next: &NonHydroState,
    profile: &BackgroundProfile,
    params: &Params,
) -> f64 {
    let grid = prev.grid();
    let dt = next.t - prev.t;
    assert!(dt > 0.0);
    let h_prev = isopycnal_height(&prev.h);
    let h_next = isopycnal_height(&next.h);
    let dhdt = h_next.sub(&h_prev).scale(1.0 / dt);

    let eval = |s: &NonHydroState, height: &ScalarField| {
        let total_u = profile.ubar_field(grid).add(&s.u);
        let mut transport = ScalarField::zeros(grid);
        for (i, a) in total_u.components.iter().enumerate() {
            transport = transport.add(&a.mul_dealiased(&ddx(height, i)));
        }
        transport
            .sub(&s.w)
            .sub(&laplacian(height).scale(params.kappa))
    };
    let mid = eval(prev, &h_prev).add(&eval(next, &h_next)).scale(0.5);
    dhdt.add(&mid).l2_norm()
}

/// Integrate the non-hydrostatic system; same reporting contract as the
/// hydrostatic runner.
#[allow(clippy::too_many_arguments)]
pub fn run_nonhydro(
    state0: NonHydroState,
    profile: &BackgroundProfile,
    params: &Params,
    dt: f64,
    n_steps: usize,
    output_stride: usize,
    norm_spec: NormSpec,
    mut sink: impl FnMut(&DiagnosticsRecord) -> Result<()>,
) -> Result<Trajectory<NonHydroState>> {
    let stride = output_stride.max(1);
    let mut state = state0;
    let mut samples = Vec::new();
    let mut records = Vec::new();
    let mut warm: Option<ScalarField> = None;

    let rec = record_nonhydro(
        &state,
        profile,
        params,
        norm_spec,
        constraint_residual(&state, profile),
        None,
    );
    sink(&rec)?;
    records.push(rec);
    samples.push(state.clone());
    let mut prev_sample = state.clone();

    for step in 0..n_steps {
        match step_nonhydro(&state, profile, params, dt, &mut warm) {
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
            let id_eta = id_eta_residual(&prev_sample, &state, profile, params);
            let rec = record_nonhydro(
                &state,
                profile,
                params,
                norm_spec,
                constraint_residual(&state, profile),
                Some(id_eta),
            );
            sink(&rec)?;
            records.push(rec);
            samples.push(state.clone());
            prev_sample = state.clone();
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
    use crate::state::well_prepared_w;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;
    use std::sync::Arc;

    fn setup(mu: f64, kappa: f64) -> (Arc<Grid>, BackgroundProfile, Params) {
        let g = Grid::new_1d(32, TAU, 16, 1.0, 2.0).unwrap();
        let profile = BackgroundProfile::uniform(&g, 1.0);
        let mut params = Params::defaults(1.0, 2.0);
        params.mu = mu;
        params.kappa = kappa;
        (g, profile, params)
    }

    fn single_mode_state(
        g: &Arc<Grid>,
        profile: &BackgroundProfile,
        eps: f64,
    ) -> NonHydroState {
        let h = ScalarField::from_fn(g, |x, _, _| eps * x.cos());
        let u = VectorField {
            components: vec![ScalarField::from_fn(g, |x, _, _| eps * x.sin())],
        };
        let w = well_prepared_w(&h, &u, profile);
        NonHydroState { t: 0.0, h, u, w }
    }

    #[test]
    fn rest_state_tendencies_vanish() {
        let (g, profile, params) = setup(0.1, 0.1);
        let state = NonHydroState::rest(&g);
        let (tend, sol) = rhs_nonhydro(&state, &profile, &params, None).unwrap();
        assert!(tend.dh.max_abs() < 1e-13);
        assert!(tend.du.max_abs() < 1e-13);
        assert!(tend.dw.max_abs() < 1e-12);
        assert!(sol.p.max_abs() < 1e-13);
    }

    #[test]
    fn x_independent_state_is_balanced() {
        let (g, profile, params) = setup(0.2, 0.0);
        let h = ScalarField::from_fn(&g, |_, _, r| 0.15 * (r - 1.5));
        let state = NonHydroState {
            t: 0.0,
            h,
            u: VectorField::zeros(&g),
            w: ScalarField::zeros(&g),
        };
        let (tend, _) = rhs_nonhydro(&state, &profile, &params, None).unwrap();
        assert!(tend.dh.max_abs() < 1e-12);
        assert!(tend.du.max_abs() < 1e-10);
        // vertical pressure term is zero because P = P_h exactly
        assert!(tend.dw.max_abs() < 1e-9, "dw {}", tend.dw.max_abs());
    }

    #[test]
    fn dw_bounded_uniformly_in_mu() {
        let (g, profile, mut params) = setup(0.0, 0.1);
        let state = single_mode_state(&g, &profile, 0.1);
        let mut norms = Vec::new();
        for mu in [1e-2, 1e-3, 1e-4] {
            params.mu = mu;
            let (tend, _) = rhs_nonhydro(&state, &profile, &params, None).unwrap();
            norms.push(tend.dw.l2_norm());
        }
        let max = norms.iter().cloned().fold(0.0f64, f64::max);
        let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            max / min < 3.0,
            "dw norms vary with mu: {norms:?} (pressure term must be O(mu)/mu)"
        );
    }

    #[test]
    fn step_keeps_rest_state() {
        let (g, profile, params) = setup(0.1, 0.1);
        let mut warm = None;
        let next =
            step_nonhydro(&NonHydroState::rest(&g), &profile, &params, 0.01, &mut warm).unwrap();
        assert!(next.h.max_abs() < 1e-14);
        assert!(next.u.max_abs() < 1e-14);
        assert!(next.w.max_abs() < 1e-13);
    }

    #[test]
    fn mass_conserved_over_run() {
        let (g, profile, params) = setup(1e-3, 0.1);
        let state = single_mode_state(&g, &profile, 0.1);
        let m0 = total_mass(&state.h);
        let traj = run_nonhydro(
            state, &profile, &params, 5e-3, 100, 10, NormSpec::L2, |_| Ok(()),
        )
        .unwrap();
        assert!(traj.termination.completed());
        let omega = TAU;
        for rec in &traj.records {
            assert!((rec.mass - m0).abs() / omega < 1e-11);
        }
    }

    #[test]
    fn time_refinement_fourth_order() {
        let (g, profile, mut params) = setup(5e-3, 0.1);
        params.solver_tol = 1e-12;
        let state0 = single_mode_state(&g, &profile, 0.1);
        let advance = |dt: f64, n: usize| -> NonHydroState {
            let mut s = state0.clone();
            let mut warm = None;
            for _ in 0..n {
                s = step_nonhydro(&s, &profile, &params, dt, &mut warm).unwrap();
            }
            s
        };
        let t_final = 0.064;
        let reference = advance(t_final / 64.0, 64);
        let coarse = advance(t_final / 4.0, 4);
        let fine = advance(t_final / 8.0, 8);
        let err = |s: &NonHydroState| {
            s.h.sub(&reference.h).max_abs()
                + s.u.components[0].sub(&reference.u.components[0]).max_abs()
                + s.w.sub(&reference.w).max_abs()
        };
        let order = (err(&coarse) / err(&fine)).log2();
        assert!((order - 4.0).abs() < 0.3, "order {order}");
    }

    #[test]
    fn constraint_residual_cases() {
        let (g, profile, _params) = setup(1e-3, 0.1);
        let rest = NonHydroState::rest(&g);
        let (div_r, bottom) = constraint_residual(&rest, &profile);
        assert_eq!(div_r, 0.0);
        assert_eq!(bottom, 0.0);

        let state = single_mode_state(&g, &profile, 0.1);
        let (div_r, bottom) = constraint_residual(&state, &profile);
        assert!(div_r < 10.0 * g.drho * g.drho, "residual {div_r}");
        assert!(bottom < 1e-14);

        // randomly perturbed w has a strictly larger residual
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut perturbed = state.clone();
        for v in perturbed.w.values.iter_mut() {
            *v += 0.01 * rng.random_range(-1.0..1.0);
        }
        let (div_p, _) = constraint_residual(&perturbed, &profile);
        assert!(div_p > 10.0 * div_r, "{div_p} vs {div_r}");
    }

    #[test]
    fn constraint_drift_stays_at_discretization_level() {
        let (g, profile, params) = setup(1e-3, 0.1);
        let state = single_mode_state(&g, &profile, 0.1);
        let (r0, _) = constraint_residual(&state, &profile);
        let traj = run_nonhydro(
            state, &profile, &params, 2e-3, 100, 25, NormSpec::L2, |_| Ok(()),
        )
        .unwrap();
        assert!(traj.termination.completed());
        let (r1, b1) = constraint_residual(traj.samples.last().unwrap(), &profile);
        assert!(r1 <= 10.0 * r0, "drift {r0} -> {r1}");
        assert!(b1 < 1e-6, "bottom w {b1}");
    }

    #[test]
    fn id_eta_residual_small_along_trajectory() {
        let (g, profile, params) = setup(1e-3, 0.1);
        let state = single_mode_state(&g, &profile, 0.1);
        let traj = run_nonhydro(
            state, &profile, &params, 2e-3, 20, 10, NormSpec::L2, |_| Ok(()),
        )
        .unwrap();
        let a = &traj.samples[0];
        let b = &traj.samples[1];
        let res = id_eta_residual(a, b, &profile, &params);
        // trapezoid-in-time check at O(dt_output^2) + quadrature error
        assert!(res < 5e-3, "id-eta residual {res}");
    }
}
