//! Montgomery potential gradient (the hydrostatic pressure force) and the
//! underlying vertical integral operator with its self-adjointness property.
//!
//! Two algebraically equivalent quadratures of the potential are kept: the
//! double-integral form is the production path (it only ever integrates the
//! horizontal gradient of the thickness), while the direct form retains the
//! `rho'` weight inside the quadrature and serves as an independent oracle.

use crate::field::{
    ddx, integrate_rho_lower, integrate_rho_lower_adjoint, integrate_rho_upper, ScalarField,
    VectorField,
};

/// Horizontal gradient of the Montgomery potential, double-integral form:
/// `grad psi = rho0 int_rho0^rho1 grad h + int_rho0^rho int_rho'^rho1 grad h`.
pub fn grad_psi(h: &ScalarField) -> VectorField {
    let grid = h.grid.clone();
    let rho0 = grid.rho0();
    VectorField {
        components: (0..grid.d)
            .map(|axis| {
                let gh = ddx(h, axis);
                let upper = integrate_rho_upper(&gh);
                // The full-column integral equals the upper integral at rho0;
                // it is rho-independent by construction.
                let surface = upper.slice_rho(0);
                let mut out = integrate_rho_lower(&upper);
                for j in 0..grid.n_rho() {
                    for i in 0..grid.n_h() {
                        out.values[(j, i)] += rho0 * surface[i];
                    }
                }
                out
            })
            .collect(),
    }
}

/// Direct (first) form of the same gradient:
/// `int_rho0^rho rho' grad h + rho int_rho^rho1 grad h`. Test oracle.
pub fn grad_psi_direct(h: &ScalarField) -> VectorField {
    let grid = h.grid.clone();
    VectorField {
        components: (0..grid.d)
            .map(|axis| {
                let gh = ddx(h, axis);
                let mut weighted = gh.clone();
                for j in 0..grid.n_rho() {
                    let r = grid.rho_nodes[j];
                    for v in weighted.values.row_mut(j) {
                        *v *= r;
                    }
                }
                let mut out = integrate_rho_lower(&weighted);
                let upper = integrate_rho_upper(&gh);
                for j in 0..grid.n_rho() {
                    let r = grid.rho_nodes[j];
                    for i in 0..grid.n_h() {
                        out.values[(j, i)] += r * upper.values[(j, i)];
                    }
                }
                out
            })
            .collect(),
    }
}

/// Hydrostatic pressure force `(1/rho) grad psi` computed through the
/// hydrostatic pressure `P_h = int_rho0^rho rho' h`:
/// `(1/rho) grad psi = (1/rho) grad P_h + grad H`.
///
/// This is the route shared with the non-hydrostatic solver, where the same
/// `P_h` appears as the hydrostatic part of the elliptic solve; using one
/// discrete expression in both systems makes the hydrostatic limit of the
/// discrete equations coincide with the discrete hydrostatic system.
pub fn hydrostatic_force(h: &ScalarField) -> VectorField {
    let grid = h.grid.clone();
    let mut weighted = h.clone();
    for j in 0..grid.n_rho() {
        let r = grid.rho_nodes[j];
        for v in weighted.values.row_mut(j) {
            *v *= r;
        }
    }
    let p_h = integrate_rho_lower(&weighted);
    let height = integrate_rho_upper(h);
    VectorField {
        components: (0..grid.d)
            .map(|axis| {
                let mut out = ddx(&p_h, axis);
                let gh = ddx(&height, axis);
                for j in 0..grid.n_rho() {
                    let inv_rho = 1.0 / grid.rho_nodes[j];
                    for i in 0..grid.n_h() {
                        out.values[(j, i)] = inv_rho * out.values[(j, i)] + gh.values[(j, i)];
                    }
                }
                out
            })
            .collect(),
    }
}

/// The vertical operator behind the potential, applied to a field column by
/// column: `(M f)(rho) = rho0 int_rho0^rho1 f + int_rho0^rho int_rho'^rho1 f`.
///
/// The inner quadrature pair is the exact discrete adjoint pair, so the
/// quadratic form `(M f, g)_w` is symmetric to round-off:
/// `(M f, g)_w = rho0 (int f)(int g) + (int_upper f, int_upper g)_w`.
pub fn apply_montgomery(f: &ScalarField) -> ScalarField {
    let grid = f.grid.clone();
    let rho0 = grid.rho0();
    let upper = integrate_rho_upper(f);
    let surface = upper.slice_rho(0);
    let mut out = integrate_rho_lower_adjoint(&upper);
    for j in 0..grid.n_rho() {
        for i in 0..grid.n_h() {
            out.values[(j, i)] += rho0 * surface[i];
        }
    }
    out
}
