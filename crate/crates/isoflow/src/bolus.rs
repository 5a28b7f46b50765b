//! Gent-McWilliams bolus (eddy-induced) velocities in isopycnal coordinates
//! and the divergence-free identity they satisfy.

use crate::error::Result;
use crate::field::{
    ddrho, ddx, dealias, div, grad, laplacian, ScalarField, VectorField,
};
use crate::state::{guard_stratification, isopycnal_height, BackgroundProfile, Params};

/// Total thickness `hbar + h`.
fn total_thickness(h: &ScalarField, profile: &BackgroundProfile) -> ScalarField {
    profile.hbar_field(&h.grid).add(h)
}

/// Horizontal bolus velocity `u* = -kappa grad h / (hbar + h)`.
pub fn ustar(
    h: &ScalarField,
    profile: &BackgroundProfile,
    params: &Params,
) -> Result<VectorField> {
    guard_stratification(h, profile, params, f64::NAN)?;
    let thickness = total_thickness(h, profile);
    let inv = thickness.map(|v| 1.0 / v);
    Ok(VectorField {
        components: (0..h.grid.d)
            .map(|axis| dealias(&ddx(h, axis).mul(&inv)).scale(-params.kappa))
            .collect(),
    })
}

/// Vertical bolus velocity
/// `w* = kappa lap H - kappa grad h . grad H / (hbar + h)`.
///
/// The Laplacian acts on the quadrature of `h` (not the other way round) so
/// that `w*` vanishes identically at `rho1` where `H` does.
pub fn wstar(
    h: &ScalarField,
    profile: &BackgroundProfile,
    params: &Params,
) -> Result<ScalarField> {
    guard_stratification(h, profile, params, f64::NAN)?;
    let height = isopycnal_height(h);
    let thickness = total_thickness(h, profile);
    let inv = thickness.map(|v| 1.0 / v);
    let cross = dealias(&grad(h).dot(&grad(&height)).mul(&inv));
    Ok(laplacian(&height).sub(&cross).scale(params.kappa))
}

/// Discrete L2 norm of `-(hbar+h) div u* - grad H . d_rho u* + d_rho w*`,
/// which vanishes identically in the continuum.
pub fn divergence_residual(
    h: &ScalarField,
    profile: &BackgroundProfile,
    params: &Params,
) -> Result<f64> {
    let us = ustar(h, profile, params)?;
    let ws = wstar(h, profile, params)?;
    let thickness = total_thickness(h, profile);
    let height = isopycnal_height(h);
    let residual = thickness
        .mul(&div(&us))
        .scale(-1.0)
        .sub(&grad(&height).dot(&us.map(ddrho)))
        .add(&ddrho(&ws));
    Ok(residual.l2_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{integrate_rho_upper, laplacian};
    use crate::grid::Grid;
    use std::f64::consts::TAU;
    use std::sync::Arc;

    fn setup(kappa: f64) -> (Arc<Grid>, BackgroundProfile, Params) {
        let g = Grid::new_1d(32, TAU, 16, 1.0, 2.0).unwrap();
        let profile = BackgroundProfile::uniform(&g, 1.0);
        let mut params = Params::defaults(1.0, 2.0);
        params.kappa = kappa;
        (g, profile, params)
    }

    #[test]
    fn ustar_trivial_cases() {
        let (g, profile, params) = setup(0.5);
        assert_eq!(
            ustar(&ScalarField::zeros(&g), &profile, &params)
                .unwrap()
                .max_abs(),
            0.0
        );
        let (_, _, params0) = setup(0.0);
        let h = ScalarField::from_fn(&g, |x, _, _| 0.1 * x.sin());
        assert_eq!(ustar(&h, &profile, &params0).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn ustar_pointwise_formula() {
        let (g, profile, params) = setup(0.5);
        let h = ScalarField::from_fn(&g, |x, _, _| 0.1 * x.sin());
        let got = ustar(&h, &profile, &params).unwrap();
        let want = ScalarField::from_fn(&g, |x, _, _| {
            -0.05 * x.cos() / (1.0 + 0.1 * x.sin())
        });
        // the dealiased quotient only drops spectrally tiny tails here
        assert!(got.components[0].sub(&want).max_abs() < 1e-10);
    }

    #[test]
    fn ustar_linear_in_kappa() {
        let (g, profile, params1) = setup(0.3);
        let (_, _, params2) = setup(0.6);
        let h = ScalarField::from_fn(&g, |x, _, r| 0.2 * x.sin() * (1.0 + 0.3 * r));
        let a = ustar(&h, &profile, &params1).unwrap();
        let b = ustar(&h, &profile, &params2).unwrap();
        assert!(b.components[0].sub(&a.components[0].scale(2.0)).max_abs() < 1e-14);
    }

    #[test]
    fn wstar_cases() {
        let (g, profile, params) = setup(1.0);
        assert_eq!(
            wstar(&ScalarField::zeros(&g), &profile, &params)
                .unwrap()
                .max_abs(),
            0.0
        );
        let x_indep = ScalarField::from_fn(&g, |_, _, r| 0.2 * r);
        assert!(wstar(&x_indep, &profile, &params).unwrap().max_abs() < 1e-13);

        // h = 0.1 sin(x), rho-independent, kappa = 1:
        // w* = -0.1 sin(x)(rho1-rho) - 0.01 cos^2(x)(rho1-rho)/(1 + 0.1 sin x)
        let h = ScalarField::from_fn(&g, |x, _, _| 0.1 * x.sin());
        let got = wstar(&h, &profile, &params).unwrap();
        let want = ScalarField::from_fn(&g, |x, _, r| {
            -0.1 * x.sin() * (2.0 - r)
                - 0.01 * x.cos() * x.cos() * (2.0 - r) / (1.0 + 0.1 * x.sin())
        });
        assert!(got.sub(&want).max_abs() < 1e-10);
        // bottom value zero to quadrature precision
        for i in 0..g.n_h() {
            assert!(got.values[(g.nrho, i)].abs() < 1e-13);
        }
    }

    #[test]
    fn laplacian_commutes_with_height_quadrature() {
        let (g, ..) = setup(1.0);
        let h = ScalarField::from_fn(&g, |x, _, r| 0.2 * x.sin() * (1.0 + r));
        let a = laplacian(&integrate_rho_upper(&h));
        let b = integrate_rho_upper(&laplacian(&h));
        assert!(a.sub(&b).max_abs() < 1e-13);
    }

    #[test]
    fn residual_trivial_cases() {
        let (g, profile, params) = setup(0.4);
        assert_eq!(
            divergence_residual(&ScalarField::zeros(&g), &profile, &params).unwrap(),
            0.0
        );
        let (_, _, params0) = setup(0.0);
        let h = ScalarField::from_fn(&g, |x, _, _| 0.1 * x.sin());
        assert_eq!(divergence_residual(&h, &profile, &params0).unwrap(), 0.0);
    }

    #[test]
    fn residual_machine_small_for_rho_independent_mode() {
        // For rho-independent h every vertical derivative in the identity is
        // exact (all profiles are linear in rho), so the residual sits at the
        // spectral-truncation floor rather than at O(drho^2).
        let (g, profile, params) = setup(0.5);
        let h = ScalarField::from_fn(&g, |x, _, _| 0.1 * x.sin());
        let r = divergence_residual(&h, &profile, &params).unwrap();
        assert!(r < 1e-10, "residual {r}");
    }

    #[test]
    fn residual_second_order_for_rho_dependent_data() {
        let mut errs = Vec::new();
        for nrho in [8usize, 16, 32] {
            let g = Grid::new_1d(32, TAU, nrho, 1.0, 2.0).unwrap();
            let profile = BackgroundProfile::uniform(&g, 1.0);
            let mut params = Params::defaults(1.0, 2.0);
            params.kappa = 0.5;
            let h = ScalarField::from_fn(&g, |x, _, r| {
                0.1 * x.sin() * (std::f64::consts::PI * (r - 1.0)).cos()
            });
            errs.push(divergence_residual(&h, &profile, &params).unwrap());
        }
        let order = (errs[0] / errs[2]).log2() / 2.0;
        assert!((order - 2.0).abs() < 0.3, "order {order}, errs {errs:?}");
    }
}
