//! Prognostic states, physical parameters, background profiles and the
//! stable-stratification guard.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ddrho, div, grad, integrate_rho_upper, ScalarField, VectorField};
use crate::grid::Grid;

/// Dimensionless constants and numerical tolerances governing one run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Params {
    /// Shallow-water parameter; `mu -> 0` is the hydrostatic limit.
    pub mu: f64,
    /// Thickness diffusivity of the eddy parameterization.
    pub kappa: f64,
    /// Artificial horizontal viscosity of the regularized hydrostatic system.
    pub nu: f64,
    /// Surface density (`rho` at the free surface).
    pub rho0: f64,
    /// Bottom density.
    pub rho1: f64,
    /// Stratification guard: runs halt when `min(hbar + h)` drops below this.
    pub h_floor: f64,
    /// CFL safety factor for explicit stages.
    pub cfl_limit: f64,
    /// Relative residual target of the pressure solver.
    pub solver_tol: f64,
    /// Iteration cap for the pressure solver; 0 means `10 * unknowns`.
    pub solver_max_iters: usize,
}

impl Params {
    pub fn defaults(rho0: f64, rho1: f64) -> Params {
        Params {
            mu: 0.0,
            kappa: 0.0,
            nu: 0.0,
            rho0,
            rho1,
            h_floor: 0.1,
            cfl_limit: 0.8,
            solver_tol: 1e-10,
            solver_max_iters: 0,
        }
    }

    /// Hard invariants; violating these is an error.
    pub fn validate(&self) -> Result<()> {
        if !(self.rho0 > 0.0 && self.rho1 > self.rho0) {
            return Err(Error::Validation {
                key: "params.rho1".into(),
                message: format!(
                    "need 0 < rho0 < rho1, got rho0 = {}, rho1 = {}",
                    self.rho0, self.rho1
                ),
            });
        }
        for (key, v) in [("mu", self.mu), ("kappa", self.kappa), ("nu", self.nu)] {
            if !(v >= 0.0) {
                return Err(Error::Validation {
                    key: format!("params.{key}"),
                    message: format!("must be nonnegative, got {v}"),
                });
            }
        }
        if !(self.h_floor > 0.0) {
            return Err(Error::Validation {
                key: "params.h_floor".into(),
                message: "stratification floor must be positive".into(),
            });
        }
        Ok(())
    }

    /// Soft regime checks; outside the analyzed regimes the code still runs
    /// but results are reported with a warning.
    pub fn regime_warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.kappa > 1.0 {
            w.push(format!("kappa = {} exceeds the analyzed regime kappa <= 1", self.kappa));
        }
        if self.mu > 0.0 && self.mu > self.kappa {
            w.push(format!(
                "mu = {} exceeds kappa = {}; the hydrostatic-limit regime assumes mu <= kappa",
                self.mu, self.kappa
            ));
        }
        w
    }
}

/// Steady background `(hbar(rho), ubar(rho))`.
#[derive(Clone, Debug)]
pub struct BackgroundProfile {
    /// Equilibrium thickness per density node; strictly positive.
    pub hbar: Vec<f64>,
    /// Equilibrium shear velocity per density node, one array per component.
    pub ubar: Vec<Vec<f64>>,
}

impl BackgroundProfile {
    pub fn uniform(grid: &Grid, hbar: f64) -> BackgroundProfile {
        BackgroundProfile {
            hbar: vec![hbar; grid.n_rho()],
            ubar: vec![vec![0.0; grid.n_rho()]; grid.d],
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if self.hbar.len() != grid.n_rho() || self.ubar.len() != grid.d {
            return Err(Error::GridMismatch);
        }
        if !self.hbar.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::Validation {
                key: "background.hbar".into(),
                message: "equilibrium thickness must be strictly positive".into(),
            });
        }
        Ok(())
    }

    /// `hbar` as a field (no horizontal variation).
    pub fn hbar_field(&self, grid: &Arc<Grid>) -> ScalarField {
        ScalarField::from_profile(grid, &self.hbar)
    }

    pub fn ubar_field(&self, grid: &Arc<Grid>) -> VectorField {
        VectorField {
            components: self
                .ubar
                .iter()
                .map(|c| ScalarField::from_profile(grid, c))
                .collect(),
        }
    }

    /// Vertical derivative of the background shear, per component.
    pub fn ubar_prime(&self, grid: &Arc<Grid>) -> VectorField {
        VectorField {
            components: self
                .ubar
                .iter()
                .map(|c| ScalarField::from_profile(grid, &grid.ddrho_profile(c)))
                .collect(),
        }
    }

    pub fn max_ubar(&self) -> f64 {
        self.ubar
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// Prognostic state of the hydrostatic system.
#[derive(Clone, Debug)]
pub struct HydroState {
    pub t: f64,
    /// Thickness perturbation.
    pub h: ScalarField,
    /// Horizontal velocity perturbation.
    pub u: VectorField,
}

/// Prognostic state of the non-hydrostatic system.
#[derive(Clone, Debug)]
pub struct NonHydroState {
    pub t: f64,
    pub h: ScalarField,
    pub u: VectorField,
    /// Vertical velocity (prognostic; the constraint is measured, not imposed).
    pub w: ScalarField,
}

impl HydroState {
    pub fn rest(grid: &Arc<Grid>) -> HydroState {
        HydroState {
            t: 0.0,
            h: ScalarField::zeros(grid),
            u: VectorField::zeros(grid),
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.h.grid
    }
}

impl NonHydroState {
    pub fn rest(grid: &Arc<Grid>) -> NonHydroState {
        NonHydroState {
            t: 0.0,
            h: ScalarField::zeros(grid),
            u: VectorField::zeros(grid),
            w: ScalarField::zeros(grid),
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.h.grid
    }

    pub fn hydro_part(&self) -> HydroState {
        HydroState {
            t: self.t,
            h: self.h.clone(),
            u: self.u.clone(),
        }
    }
}

/// Isopycnal height `H(., rho) = int_rho^rho1 h`; exactly zero at `rho1`.
pub fn isopycnal_height(h: &ScalarField) -> ScalarField {
    integrate_rho_upper(h)
}

/// Result of the stable-stratification scan.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StratificationReport {
    pub min_thickness: f64,
    pub max_thickness: f64,
    pub pass: bool,
}

/// Scan `hbar + h` over all nodes against the floor.
pub fn stratification_report(
    h: &ScalarField,
    profile: &BackgroundProfile,
    params: &Params,
) -> StratificationReport {
    let g = &h.grid;
    let mut min_v = f64::INFINITY;
    let mut max_v = f64::NEG_INFINITY;
    for j in 0..g.n_rho() {
        let hb = profile.hbar[j];
        for &v in h.values.row(j) {
            let tot = hb + v;
            min_v = min_v.min(tot);
            max_v = max_v.max(tot);
        }
    }
    StratificationReport {
        min_thickness: min_v,
        max_thickness: max_v,
        pass: min_v >= params.h_floor && min_v.is_finite(),
    }
}

/// Guard used by the integrators: errors on stratification loss.
pub fn guard_stratification(
    h: &ScalarField,
    profile: &BackgroundProfile,
    params: &Params,
    t: f64,
) -> Result<StratificationReport> {
    let report = stratification_report(h, profile, params);
    if !report.pass {
        return Err(Error::Stratification {
            min: report.min_thickness,
            floor: params.h_floor,
            t,
        });
    }
    Ok(report)
}

/// Vertical velocity satisfying the incompressibility constraint and the
/// bottom condition `w = 0` at `rho = rho1` (well-prepared data):
/// `w(rho) = -int_rho^rho1 [(hbar+h) div u + grad H . (ubar' + d_rho u)]`.
pub fn well_prepared_w(
    h: &ScalarField,
    u: &VectorField,
    profile: &BackgroundProfile,
) -> ScalarField {
    let grid = &h.grid;
    let hbar = profile.hbar_field(grid);
    let height = isopycnal_height(h);
    let grad_height = grad(&height);
    let shear = profile.ubar_prime(grid).add(&ddrho_vec(u));
    let integrand = hbar
        .add(h)
        .mul(&div(u))
        .add(&grad_height.dot(&shear));
    integrate_rho_upper(&integrand).scale(-1.0)
}

pub(crate) fn ddrho_vec(u: &VectorField) -> VectorField {
    u.map(ddrho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use std::f64::consts::TAU;

    fn setup() -> (Arc<Grid>, BackgroundProfile, Params) {
        let g = Grid::new_1d(16, TAU, 8, 1.0, 2.0).unwrap();
        let profile = BackgroundProfile::uniform(&g, 1.0);
        let params = Params::defaults(1.0, 2.0);
        (g, profile, params)
    }

    #[test]
    fn isopycnal_height_cases() {
        let (g, ..) = setup();
        assert_eq!(isopycnal_height(&ScalarField::zeros(&g)).max_abs(), 0.0);

        let one = ScalarField::constant(&g, 1.0);
        let height = isopycnal_height(&one);
        for (j, r) in g.rho_nodes.iter().enumerate() {
            assert!((height.values[(j, 0)] - (2.0 - r)).abs() < 1e-14);
        }

        let h = ScalarField::from_fn(&g, |x, _, _| x.cos());
        let height = isopycnal_height(&h);
        let want = ScalarField::from_fn(&g, |x, _, r| (2.0 - r) * x.cos());
        assert!(height.sub(&want).max_abs() < 1e-13);
        // exact zero at the bottom node
        for i in 0..g.n_h() {
            assert_eq!(height.values[(g.nrho, i)], 0.0);
        }
    }

    #[test]
    fn height_then_ddrho_recovers_minus_h() {
        let g = Grid::new_1d(8, TAU, 48, 1.0, 2.0).unwrap();
        let h = ScalarField::from_fn(&g, |x, _, r| x.cos() * (2.0 * r).sin());
        let d = ddrho(&isopycnal_height(&h));
        let mut err = 0.0f64;
        for j in 1..g.n_rho() - 1 {
            for i in 0..g.n_h() {
                err = err.max((d.values[(j, i)] + h.values[(j, i)]).abs());
            }
        }
        assert!(err < 10.0 * g.drho * g.drho, "err {err}");
    }

    #[test]
    fn stratification_cases() {
        let (g, profile, params) = setup();
        let rep = stratification_report(&ScalarField::zeros(&g), &profile, &params);
        assert!(rep.pass);
        assert_eq!(rep.min_thickness, 1.0);
        assert_eq!(rep.max_thickness, 1.0);

        let bad = ScalarField::constant(&g, -0.95);
        assert!(!stratification_report(&bad, &profile, &params).pass);
        assert!(guard_stratification(&bad, &profile, &params, 0.0).is_err());

        let h = ScalarField::from_fn(&g, |x, _, _| 0.2 * x.sin());
        let rep = stratification_report(&h, &profile, &params);
        assert!((rep.min_thickness - 0.8).abs() < 1e-12);
        assert!((rep.max_thickness - 1.2).abs() < 1e-12);
    }

    #[test]
    fn well_prepared_w_cases() {
        let (g, profile, _) = setup();
        // u = 0 -> w = 0
        let w = well_prepared_w(
            &ScalarField::from_fn(&g, |x, _, _| 0.3 * x.cos()),
            &VectorField::zeros(&g),
            &profile,
        );
        assert_eq!(w.max_abs(), 0.0);

        // h = 0, hbar = 1, u = sin(x): w = -cos(x) (rho1 - rho)
        let u = VectorField {
            components: vec![ScalarField::from_fn(&g, |x, _, _| x.sin())],
        };
        let w = well_prepared_w(&ScalarField::zeros(&g), &u, &profile);
        let want = ScalarField::from_fn(&g, |x, _, r| -x.cos() * (2.0 - r));
        assert!(w.sub(&want).max_abs() < 1e-12);
        for i in 0..g.n_h() {
            assert_eq!(w.values[(g.nrho, i)], 0.0);
        }

        // x-independent u -> w = 0
        let u = VectorField {
            components: vec![ScalarField::from_fn(&g, |_, _, r| r)],
        };
        let w = well_prepared_w(&ScalarField::zeros(&g), &u, &profile);
        assert!(w.max_abs() < 1e-13);
    }

    #[test]
    fn params_validation_and_warnings() {
        let mut p = Params::defaults(1.0, 2.0);
        assert!(p.validate().is_ok());
        assert!(p.regime_warnings().is_empty());
        p.kappa = 0.5;
        p.mu = 0.6;
        assert_eq!(p.regime_warnings().len(), 1);
        p.rho1 = 0.5;
        assert!(p.validate().is_err());
    }
}
