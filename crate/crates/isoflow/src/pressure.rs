//! Assembly and solution of the non-hydrostatic pressure boundary-value
//! problem: an anisotropic variable-coefficient elliptic equation with a
//! Dirichlet condition at the surface density and a Neumann flux condition
//! at the bottom density.
//!
//! Discretization: Fourier in the horizontal, flux-form second-order
//! differences in density. The operator is assembled variationally, so the
//! discrete system is symmetric positive definite to round-off; it is solved
//! by conjugate gradients preconditioned with the horizontally-averaged
//! coefficient operator (block tridiagonal per wavenumber, exact at rest).
//!
//! The vertical face coefficients average numerator and denominator
//! separately; with that choice the rest state solves the discrete problem
//! exactly (zero pressure deviation) and any x-independent state yields the
//! hydrostatic pressure exactly, so the reported non-hydrostatic part is a
//! genuine measure of hydrostatic imbalance.

use ndarray::Array2;
use num_complex::Complex64;

use crate::bolus::{ustar, wstar};
use crate::error::{Error, Result};
use crate::field::{
    ddrho, ddx, dealias, div, grad, integrate_rho_lower, lambda_s, to_physical,
    to_spectral_unchecked, ScalarField, VectorField,
};
use crate::state::{
    guard_stratification, isopycnal_height, BackgroundProfile, NonHydroState, Params,
};

/// Per-node blocks of the symmetric coefficient matrix
/// `[[ (hbar+h)/rho Id , sqrt(mu) grad H / rho ],
///   [ sym             , (1 + mu |grad H|^2) / (rho (hbar+h)) ]]`.
#[derive(Clone, Debug)]
pub struct CoefficientField {
    pub mu: f64,
    /// Horizontal block `(hbar+h)/rho`.
    pub alpha: ScalarField,
    /// Off-diagonal column `sqrt(mu) grad H / rho`.
    pub b: VectorField,
    /// Vertical entry `(1 + mu |grad H|^2)/(rho (hbar+h))`.
    pub c: ScalarField,
    /// `hbar + h`, kept for face assembly.
    thickness: ScalarField,
    /// `grad H`, kept for face assembly.
    grad_height: VectorField,
}

/// Solution of the pressure problem with its hydrostatic split.
#[derive(Clone, Debug)]
pub struct PressureSolution {
    /// Deviation pressure, `P = 0` at the surface density exactly.
    pub p: ScalarField,
    /// Hydrostatic part `int_rho0^rho rho' h`.
    pub p_h: ScalarField,
    /// Non-hydrostatic remainder `P - P_h`.
    pub p_nh: ScalarField,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Assemble the coefficient blocks for a state. Fails the stratification
/// guard below the floor; the assembled matrix is then positive definite at
/// every node.
pub fn assemble_coefficients(
    h: &ScalarField,
    height: &ScalarField,
    profile: &BackgroundProfile,
    params: &Params,
) -> Result<CoefficientField> {
    guard_stratification(h, profile, params, f64::NAN)?;
    let grid = h.grid.clone();
    let mu = params.mu;
    let thickness = profile.hbar_field(&grid).add(h);
    let grad_height = grad(height);

    let mut alpha = thickness.clone();
    let mut c = ScalarField::zeros(&grid);
    for j in 0..grid.n_rho() {
        let rho = grid.rho_nodes[j];
        for i in 0..grid.n_h() {
            alpha.values[(j, i)] /= rho;
            let mut g2 = 0.0;
            for comp in &grad_height.components {
                g2 += comp.values[(j, i)] * comp.values[(j, i)];
            }
            c.values[(j, i)] = (1.0 + mu * g2) / (rho * thickness.values[(j, i)]);
        }
    }
    let b = grad_height.map(|comp| {
        let mut out = comp.clone();
        for j in 0..grid.n_rho() {
            let rho = grid.rho_nodes[j];
            for v in out.values.row_mut(j) {
                *v *= mu.sqrt() / rho;
            }
        }
        out
    });
    Ok(CoefficientField {
        mu,
        alpha,
        b,
        c,
        thickness,
        grad_height,
    })
}

/// Smallest eigenvalue of the per-node coefficient matrix, node by node.
/// Uses the closed-form reduction: eigenvalues are `alpha` (multiplicity
/// `d - 1`) and the pair of the 2x2 `[alpha, |b|; |b|, c]`.
pub fn min_eigenvalues(coeff: &CoefficientField) -> ScalarField {
    let grid = coeff.alpha.grid.clone();
    let mut out = ScalarField::zeros(&grid);
    for j in 0..grid.n_rho() {
        for i in 0..grid.n_h() {
            let a = coeff.alpha.values[(j, i)];
            let c = coeff.c.values[(j, i)];
            let mut b2 = 0.0;
            for comp in &coeff.b.components {
                b2 += comp.values[(j, i)] * comp.values[(j, i)];
            }
            let half_sum = 0.5 * (a + c);
            let half_diff = 0.5 * (a - c);
            let lam = half_sum - (half_diff * half_diff + b2).sqrt();
            out.values[(j, i)] = if grid.d == 2 { lam.min(a) } else { lam };
        }
    }
    out
}

/// Five-group physical right side of the pressure problem, with the column
/// integral eliminated through the bolus cancellation identity.
pub fn assemble_rhs(
    state: &NonHydroState,
    profile: &BackgroundProfile,
    params: &Params,
) -> Result<ScalarField> {
    let grid = state.grid();
    guard_stratification(&state.h, profile, params, state.t)?;
    let thickness = profile.hbar_field(grid).add(&state.h);
    let height = isopycnal_height(&state.h);
    let grad_height = grad(&height);
    let adv = profile
        .ubar_field(grid)
        .add(&state.u)
        .add(&ustar(&state.h, profile, params)?);
    let shear = profile.ubar_prime(grid).add(&state.u.map(ddrho));

    // (adv . grad) u, one component at a time
    let advected_u: Vec<ScalarField> = (0..grid.d)
        .map(|c| {
            let mut out = ScalarField::zeros(grid);
            for (i, a) in adv.components.iter().enumerate() {
                out = out.add(&a.mul_dealiased(&ddx(&state.u.components[c], i)));
            }
            out
        })
        .collect();

    // group 1: -(hbar+h) div((adv . grad) u)
    let mut div_adv = ScalarField::zeros(grid);
    for (c, t) in advected_u.iter().enumerate() {
        div_adv = div_adv.add(&ddx(t, c));
    }
    let g1 = thickness.mul_dealiased(&div_adv).scale(-1.0);

    // group 2: -grad H . d_rho((adv . grad) u)
    let mut g2 = ScalarField::zeros(grid);
    for (c, t) in advected_u.iter().enumerate() {
        g2 = g2.add(&grad_height.components[c].mul_dealiased(&ddrho(t)));
    }
    let g2 = g2.scale(-1.0);

    // group 3: d_rho(adv . grad w)
    let mut adv_w = ScalarField::zeros(grid);
    for (i, a) in adv.components.iter().enumerate() {
        adv_w = adv_w.add(&a.mul_dealiased(&ddx(&state.w, i)));
    }
    let g3 = ddrho(&adv_w);

    // group 4: -div((hbar+h) adv) (div u)
    let flux = adv.map(|a| thickness.mul_dealiased(a));
    let g4 = div(&flux).mul_dealiased(&div(&state.u)).scale(-1.0);

    // group 5: -grad(adv . grad H - w - w*) . (ubar' + d_rho u)
    let wst = wstar(&state.h, profile, params)?;
    let mut transport = ScalarField::zeros(grid);
    for (i, a) in adv.components.iter().enumerate() {
        transport = transport.add(&a.mul_dealiased(&grad_height.components[i]));
    }
    let source = transport.sub(&state.w).sub(&wst);
    let mut g5 = ScalarField::zeros(grid);
    for (c, s) in shear.components.iter().enumerate() {
        g5 = g5.add(&ddx(&source, c).mul_dealiased(s));
    }
    let g5 = g5.scale(-1.0);

    Ok(g1.add(&g2).add(&g3).add(&g4).add(&g5))
}

/// Pre-cancellation form of the right side, with the column integral of the
/// thickness flux computed by quadrature instead of the identity. Retained
/// as an independent oracle for [`assemble_rhs`].
pub fn assemble_rhs_direct(
    state: &NonHydroState,
    profile: &BackgroundProfile,
    params: &Params,
) -> Result<ScalarField> {
    let grid = state.grid();
    let with_identity = assemble_rhs(state, profile, params)?;
    // swap group 5's source for the explicit column integral
    let thickness = profile.hbar_field(grid).add(&state.h);
    let height = isopycnal_height(&state.h);
    let grad_height = grad(&height);
    let adv = profile
        .ubar_field(grid)
        .add(&state.u)
        .add(&ustar(&state.h, profile, params)?);
    let shear = profile.ubar_prime(grid).add(&state.u.map(ddrho));
    let wst = wstar(&state.h, profile, params)?;

    let flux = adv.map(|a| thickness.mul_dealiased(a));
    let column = crate::field::integrate_rho_upper(&div(&flux));
    let mut transport = ScalarField::zeros(grid);
    for (i, a) in adv.components.iter().enumerate() {
        transport = transport.add(&a.mul_dealiased(&grad_height.components[i]));
    }
    let identity_source = transport.sub(&state.w).sub(&wst);

    let mut correction = ScalarField::zeros(grid);
    for (c, s) in shear.components.iter().enumerate() {
        let diff = ddx(&column, c).sub(&ddx(&identity_source, c));
        correction = correction.add(&diff.mul_dealiased(s));
    }
    Ok(with_identity.sub(&correction))
}

// ---------------------------------------------------------------------------
// Discrete operator
// ---------------------------------------------------------------------------

/// Vertical right-side channel: sampled at nodes (averaged onto faces) or
/// given directly at faces.
pub enum VerticalData<'a> {
    Nodes(&'a ScalarField),
    Faces(Array2<f64>),
}

/// Variational discretization of the elliptic operator restricted to the
/// space `{ P : P = 0 at rho0 }`; symmetric positive definite by assembly.
pub struct Discretization {
    grid: std::sync::Arc<crate::grid::Grid>,
    mu: f64,
    /// `W_n mu alpha` at nodes.
    alpha_w: Array2<f64>,
    /// `W_f c_face` at faces.
    c_face_w: Array2<f64>,
    /// `W_f mu (grad H)/rho` at faces, one array per horizontal component.
    cross_face_w: Vec<Array2<f64>>,
    /// Horizontally averaged coefficients, factored per wavenumber.
    precond: Preconditioner,
}

struct Preconditioner {
    /// LDL^T factors of the per-wavenumber tridiagonal blocks,
    /// unknowns j = 1..=nrho.
    diag: Vec<Vec<f64>>,
    sub: Vec<Vec<f64>>,
}

fn node_weight(grid: &crate::grid::Grid, j: usize) -> f64 {
    grid.rho_weight(j) * grid.dx_area()
}

impl Discretization {
    pub fn new(coeff: &CoefficientField) -> Discretization {
        let grid = coeff.alpha.grid.clone();
        let (nr, nh) = (grid.n_rho(), grid.n_h());
        let n_faces = grid.nrho;
        let mu = coeff.mu;
        let da = grid.dx_area();
        let w_face = grid.drho * da;

        let mut alpha_w = Array2::zeros((nr, nh));
        for j in 0..nr {
            let w = node_weight(&grid, j);
            for i in 0..nh {
                alpha_w[(j, i)] = w * mu * coeff.alpha.values[(j, i)];
            }
        }

        // face coefficient: numerator and denominator averaged separately so
        // that hydrostatic columns are reproduced exactly
        let mut c_face_w = Array2::zeros((n_faces, nh));
        for f in 0..n_faces {
            for i in 0..nh {
                let num = |j: usize| {
                    let mut g2 = 0.0;
                    for comp in &coeff.grad_height.components {
                        g2 += comp.values[(j, i)] * comp.values[(j, i)];
                    }
                    1.0 + mu * g2
                };
                let den = |j: usize| grid.rho_nodes[j] * coeff.thickness.values[(j, i)];
                let numerator = 0.5 * (num(f) + num(f + 1));
                let denominator = 0.5 * (den(f) + den(f + 1));
                c_face_w[(f, i)] = w_face * numerator / denominator;
            }
        }

        let cross_face_w: Vec<Array2<f64>> = (0..grid.d)
            .map(|comp| {
                let gh = &coeff.grad_height.components[comp];
                let mut arr = Array2::zeros((n_faces, nh));
                for f in 0..n_faces {
                    for i in 0..nh {
                        let at = |j: usize| mu * gh.values[(j, i)] / grid.rho_nodes[j];
                        arr[(f, i)] = w_face * 0.5 * (at(f) + at(f + 1));
                    }
                }
                arr
            })
            .collect();

        let precond = build_preconditioner(&grid, &alpha_w, &c_face_w);
        Discretization {
            grid,
            mu,
            alpha_w,
            c_face_w,
            cross_face_w,
            precond,
        }
    }

    pub fn grid(&self) -> &std::sync::Arc<crate::grid::Grid> {
        &self.grid
    }

    fn grho(&self, p: &ScalarField) -> Array2<f64> {
        let (nf, nh) = (self.grid.nrho, self.grid.n_h());
        let inv = 1.0 / self.grid.drho;
        let mut out = Array2::zeros((nf, nh));
        for f in 0..nf {
            for i in 0..nh {
                out[(f, i)] = (p.values[(f + 1, i)] - p.values[(f, i)]) * inv;
            }
        }
        out
    }

    fn grho_transpose(&self, v: &Array2<f64>) -> ScalarField {
        let (nr, nh) = (self.grid.n_rho(), self.grid.n_h());
        let nf = self.grid.nrho;
        let inv = 1.0 / self.grid.drho;
        let mut out = ScalarField::zeros(&self.grid);
        for j in 0..nr {
            for i in 0..nh {
                let upper = if j < nf { v[(j, i)] } else { 0.0 };
                let lower = if j > 0 { v[(j - 1, i)] } else { 0.0 };
                out.values[(j, i)] = (lower - upper) * inv;
            }
        }
        out
    }

    fn to_faces(&self, f: &ScalarField) -> Array2<f64> {
        let (nf, nh) = (self.grid.nrho, self.grid.n_h());
        let mut out = Array2::zeros((nf, nh));
        for j in 0..nf {
            for i in 0..nh {
                out[(j, i)] = 0.5 * (f.values[(j, i)] + f.values[(j + 1, i)]);
            }
        }
        out
    }

    fn faces_transpose(&self, v: &Array2<f64>) -> ScalarField {
        let (nr, nh) = (self.grid.n_rho(), self.grid.n_h());
        let nf = self.grid.nrho;
        let mut out = ScalarField::zeros(&self.grid);
        for j in 0..nr {
            for i in 0..nh {
                let upper = if j < nf { v[(j, i)] } else { 0.0 };
                let lower = if j > 0 { v[(j - 1, i)] } else { 0.0 };
                out.values[(j, i)] = 0.5 * (lower + upper);
            }
        }
        out
    }

    /// Apply the symmetric operator: `(B p)_i = B(p, e_i)` with the Dirichlet
    /// row zeroed. Input must vanish on the surface row.
    pub fn apply(&self, p: &ScalarField) -> ScalarField {
        let grid = &self.grid;
        let mut out = ScalarField::zeros(grid);

        let gx: Vec<ScalarField> = (0..grid.d).map(|c| ddx(p, c)).collect();
        let dp = self.grho(p);

        // horizontal block: -sum_c d_x_c (W mu alpha g_c)
        for (c, g) in gx.iter().enumerate() {
            let weighted = ScalarField {
                grid: grid.clone(),
                values: &g.values * &self.alpha_w,
            };
            out = out.sub(&ddx(&weighted, c));
        }

        // vertical block and cross terms at faces
        let (nf, nh) = (grid.nrho, grid.n_h());
        let mut face_flux = Array2::zeros((nf, nh));
        for f in 0..nf {
            for i in 0..nh {
                face_flux[(f, i)] = self.c_face_w[(f, i)] * dp[(f, i)];
            }
        }
        for (c, g) in gx.iter().enumerate() {
            let gf = self.to_faces(g);
            for f in 0..nf {
                for i in 0..nh {
                    face_flux[(f, i)] += self.cross_face_w[c][(f, i)] * gf[(f, i)];
                }
            }
        }
        out = out.add(&self.grho_transpose(&face_flux));

        // remaining cross piece: -sum_c d_x_c Avg^T (W b dp)
        for c in 0..grid.d {
            let mut v = Array2::zeros((nf, nh));
            for f in 0..nf {
                for i in 0..nh {
                    v[(f, i)] = self.cross_face_w[c][(f, i)] * dp[(f, i)];
                }
            }
            let nodes = self.faces_transpose(&v);
            out = out.sub(&ddx(&nodes, c));
        }

        out.values.row_mut(0).fill(0.0);
        out
    }

    /// Weighted load vector of the generic problem
    /// `div^mu(A grad^mu P) = Q0 + sqrt(mu) Lambda Q1 + div^mu R`
    /// with the natural bottom flux `(A grad^mu P - R) . e_rho = 0 at rho1`.
    pub fn load(
        &self,
        q0: &ScalarField,
        q1: &ScalarField,
        r_horizontal: &VectorField,
        r_vertical: VerticalData,
    ) -> ScalarField {
        let grid = &self.grid;
        let (nr, nh) = (grid.n_rho(), grid.n_h());
        let mut ell = ScalarField::zeros(grid);

        // -(Q0 + sqrt(mu) Lambda Q1) with node weights
        let q = q0.add(&lambda_s(q1, 1.0).scale(self.mu.sqrt()));
        for j in 0..nr {
            let w = node_weight(grid, j);
            for i in 0..nh {
                ell.values[(j, i)] = -w * q.values[(j, i)];
            }
        }

        // + sqrt(mu) R_x . grad phi  ->  -sqrt(mu) sum_c d_x_c (W R_x,c)
        for (c, r) in r_horizontal.components.iter().enumerate() {
            let mut weighted = ScalarField::zeros(grid);
            for j in 0..nr {
                let w = node_weight(grid, j) * self.mu.sqrt();
                for i in 0..nh {
                    weighted.values[(j, i)] = w * r.values[(j, i)];
                }
            }
            ell = ell.sub(&ddx(&weighted, c));
        }

        // + R_rho d_rho phi at faces
        let r_faces = match r_vertical {
            VerticalData::Nodes(f) => self.to_faces(f),
            VerticalData::Faces(arr) => arr,
        };
        let nf = grid.nrho;
        let mut weighted = Array2::zeros((nf, nh));
        let w_face = grid.drho * grid.dx_area();
        for f in 0..nf {
            for i in 0..nh {
                weighted[(f, i)] = w_face * r_faces[(f, i)];
            }
        }
        ell = ell.add(&self.grho_transpose(&weighted));

        ell.values.row_mut(0).fill(0.0);
        ell
    }

    fn precondition(&self, r: &ScalarField) -> ScalarField {
        let grid = &self.grid;
        let nr = grid.n_rho();
        let nh = grid.n_h();
        let nrho = grid.nrho;

        let spec = to_spectral_unchecked(r);
        let mut solved = spec;
        let mut col = vec![Complex64::default(); nrho];
        for m in 0..nh {
            for j in 1..nr {
                col[j - 1] = solved.coeffs[(j, m)];
            }
            let d = &self.precond.diag[m];
            let l = &self.precond.sub[m];
            for j in 1..nrho {
                let carried = col[j - 1] * l[j - 1];
                col[j] -= carried;
            }
            for (j, dj) in d.iter().enumerate() {
                col[j] /= dj;
            }
            for j in (0..nrho - 1).rev() {
                let carried = col[j + 1] * l[j];
                col[j] -= carried;
            }
            solved.coeffs[(0, m)] = Complex64::default();
            for j in 1..nr {
                solved.coeffs[(j, m)] = col[j - 1];
            }
        }
        let mut out = to_physical(&solved);
        out.values.row_mut(0).fill(0.0);
        out
    }
}

fn build_preconditioner(
    grid: &std::sync::Arc<crate::grid::Grid>,
    alpha_w: &Array2<f64>,
    c_face_w: &Array2<f64>,
) -> Preconditioner {
    let nh = grid.n_h();
    let nrho = grid.nrho;
    let inv_dr2 = 1.0 / (grid.drho * grid.drho);

    // horizontal means of the weighted coefficients
    let mut bar_alpha = vec![0.0; grid.n_rho()];
    for (j, v) in bar_alpha.iter_mut().enumerate() {
        *v = alpha_w.row(j).iter().sum::<f64>() / nh as f64;
    }
    let mut bar_cf = vec![0.0; nrho];
    for (f, v) in bar_cf.iter_mut().enumerate() {
        *v = c_face_w.row(f).iter().sum::<f64>() / nh as f64;
    }

    // effective |k|^2 per mode: the spectral derivative drops the Nyquist
    // mode of each axis, so the averaged operator must do the same
    let nyq_x = std::f64::consts::TAU / grid.lx * (grid.nx / 2) as f64;
    let nyq_y = if grid.d == 2 {
        std::f64::consts::TAU / grid.ly * (grid.ny / 2) as f64
    } else {
        f64::INFINITY
    };

    let mut diag_all = Vec::with_capacity(nh);
    let mut sub_all = Vec::with_capacity(nh);
    for m in 0..nh {
        let kx = grid.kx()[m];
        let ky = grid.ky()[m];
        let kx_eff = if kx.abs() >= nyq_x { 0.0 } else { kx };
        let ky_eff = if ky.abs() >= nyq_y { 0.0 } else { ky };
        let k2 = kx_eff * kx_eff + ky_eff * ky_eff;

        // tridiagonal over unknown nodes j = 1..=nrho
        let mut diag = vec![0.0; nrho];
        let mut sub = vec![0.0; nrho.saturating_sub(1)];
        for idx in 0..nrho {
            let j = idx + 1;
            let mut dval = k2 * bar_alpha[j];
            dval += bar_cf[j - 1] * inv_dr2;
            if j < nrho {
                dval += bar_cf[j] * inv_dr2;
            }
            diag[idx] = dval;
            if idx + 1 < nrho {
                sub[idx] = -bar_cf[j] * inv_dr2;
            }
        }
        // LDL^T factorization
        let mut d = vec![0.0; nrho];
        let mut l = vec![0.0; nrho.saturating_sub(1)];
        d[0] = diag[0];
        for idx in 1..nrho {
            l[idx - 1] = sub[idx - 1] / d[idx - 1];
            d[idx] = diag[idx] - l[idx - 1] * l[idx - 1] * d[idx - 1];
        }
        diag_all.push(d);
        sub_all.push(l);
    }
    Preconditioner {
        diag: diag_all,
        sub: sub_all,
    }
}

fn dot(a: &ScalarField, b: &ScalarField) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.values.iter().zip(b.values.iter()) {
        s += x * y;
    }
    s
}

/// Preconditioned conjugate gradients on the assembled SPD system. The
/// residual is measured in the preconditioner norm relative to the load.
pub fn solve_linear(
    disc: &Discretization,
    ell: &ScalarField,
    warm_start: Option<&ScalarField>,
    params: &Params,
) -> Result<(ScalarField, SolveStats)> {
    let grid = disc.grid();
    let unknowns = grid.n_h() * grid.nrho;
    let max_iters = if params.solver_max_iters == 0 {
        10 * unknowns
    } else {
        params.solver_max_iters
    };
    let tol = params.solver_tol;

    let z0 = disc.precondition(ell);
    let ref_norm = dot(ell, &z0).max(0.0).sqrt();
    if ref_norm == 0.0 {
        return Ok((
            ScalarField::zeros(grid),
            SolveStats {
                iterations: 0,
                residual: 0.0,
            },
        ));
    }

    let mut x = match warm_start {
        Some(s) if s.same_grid(ell) => {
            let mut s = s.clone();
            s.values.row_mut(0).fill(0.0);
            s
        }
        _ => ScalarField::zeros(grid),
    };
    let mut r = ell.sub(&disc.apply(&x));
    r.values.row_mut(0).fill(0.0);
    let mut z = disc.precondition(&r);
    let mut rz = dot(&r, &z);
    let mut p = z.clone();
    let mut history = Vec::new();
    let mut residual = rz.max(0.0).sqrt() / ref_norm;
    history.push(residual);
    if residual <= tol {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                residual,
            },
        ));
    }

    for iter in 1..=max_iters {
        let q = disc.apply(&p);
        let pq = dot(&p, &q);
        if pq <= 0.0 {
            return Err(Error::SolverDiverged {
                iterations: iter,
                residual,
                history,
            });
        }
        let a = rz / pq;
        x.axpy(a, &p);
        r.axpy(-a, &q);
        z = disc.precondition(&r);
        let rz_new = dot(&r, &z);
        residual = rz_new.max(0.0).sqrt() / ref_norm;
        history.push(residual);
        if residual <= tol {
            return Ok((
                x,
                SolveStats {
                    iterations: iter,
                    residual,
                },
            ));
        }
        let beta = rz_new / rz;
        rz = rz_new;
        let mut p_next = z.clone();
        p_next.axpy(beta, &p);
        p = p_next;
    }
    Err(Error::SolverDiverged {
        iterations: max_iters,
        residual,
        history,
    })
}

/// Solve the generic problem
/// `div^mu(A grad^mu P) = Q0 + sqrt(mu) Lambda Q1 + div^mu R`
/// with `P = 0` at `rho0` and the natural flux condition
/// `(A grad^mu P - R) . e_rho = 0` at `rho1`.
pub fn solve_generic(
    coeff: &CoefficientField,
    q0: &ScalarField,
    q1: &ScalarField,
    r_horizontal: &VectorField,
    r_vertical: &ScalarField,
    params: &Params,
) -> Result<(ScalarField, SolveStats)> {
    let disc = Discretization::new(coeff);
    let ell = disc.load(q0, q1, r_horizontal, VerticalData::Nodes(r_vertical));
    solve_linear(&disc, &ell, None, params)
}

/// Full physical pressure solve for a non-hydrostatic state, with the
/// hydrostatic/non-hydrostatic split.
pub fn solve_pressure(
    state: &NonHydroState,
    profile: &BackgroundProfile,
    params: &Params,
    warm_start: Option<&ScalarField>,
) -> Result<PressureSolution> {
    let disc = build_discretization(state, profile, params)?;
    solve_pressure_with(&disc, state, profile, params, warm_start)
}

/// Assemble the discrete operator for a state (reused across solves of the
/// same state, e.g. warm-started stages).
pub fn build_discretization(
    state: &NonHydroState,
    profile: &BackgroundProfile,
    params: &Params,
) -> Result<Discretization> {
    let height = isopycnal_height(&state.h);
    let coeff = assemble_coefficients(&state.h, &height, profile, params)?;
    Ok(Discretization::new(&coeff))
}

pub fn solve_pressure_with(
    disc: &Discretization,
    state: &NonHydroState,
    profile: &BackgroundProfile,
    params: &Params,
    warm_start: Option<&ScalarField>,
) -> Result<PressureSolution> {
    let grid = state.grid();
    let rhs = assemble_rhs(state, profile, params)?;
    let q0 = rhs.scale(params.mu);
    let q1 = ScalarField::zeros(grid);

    // R_x = -sqrt(mu) hbar grad H (from the equilibrium pressure column)
    let height = isopycnal_height(&state.h);
    let grad_height = grad(&height);
    let hbar = profile.hbar_field(grid);
    let r_horizontal = grad_height.map(|c| c.mul(&hbar).scale(-params.mu.sqrt()));

    // vertical channel at faces: 1 - c_face * avg(rho hbar); the constant 1
    // carries the bottom flux datum and the second term subtracts the
    // equilibrium column, face-exactly
    let thickness = hbar.add(&state.h);
    let (nf, nh) = (grid.nrho, grid.n_h());
    let mut r_faces = Array2::zeros((nf, nh));
    for f in 0..nf {
        let rho_hbar_face = 0.5
            * (grid.rho_nodes[f] * profile.hbar[f]
                + grid.rho_nodes[f + 1] * profile.hbar[f + 1]);
        for i in 0..nh {
            let num = |j: usize| {
                let mut g2 = 0.0;
                for comp in &grad_height.components {
                    g2 += comp.values[(j, i)] * comp.values[(j, i)];
                }
                1.0 + params.mu * g2
            };
            let den = |j: usize| grid.rho_nodes[j] * thickness.values[(j, i)];
            let num_face = 0.5 * (num(f) + num(f + 1));
            let den_face = 0.5 * (den(f) + den(f + 1));
            // written so the numerator cancels bit-exactly at rest
            r_faces[(f, i)] = (den_face - num_face * rho_hbar_face) / den_face;
        }
    }

    let ell = disc.load(&q0, &q1, &r_horizontal, VerticalData::Faces(r_faces));
    let (p, stats) = solve_linear(disc, &ell, warm_start, params)?;

    let p_h = hydrostatic_pressure(&state.h);
    let p_nh = p.sub(&p_h);
    Ok(PressureSolution {
        p,
        p_h,
        p_nh,
        iterations: stats.iterations,
        residual: stats.residual,
    })
}

/// Hydrostatic pressure `int_rho0^rho rho' h` of the thickness deviation.
pub fn hydrostatic_pressure(h: &ScalarField) -> ScalarField {
    let grid = &h.grid;
    let mut weighted = h.clone();
    for j in 0..grid.n_rho() {
        let rho = grid.rho_nodes[j];
        for v in weighted.values.row_mut(j) {
            *v *= rho;
        }
    }
    integrate_rho_lower(&weighted)
}

/// Hydrostatic-balance defect `(d_rho P - rho h) / (rho (hbar + h))`,
/// evaluated at faces (where the trapezoid hydrostatic pressure satisfies
/// the balance exactly) and averaged back to nodes.
pub fn balance_defect(
    p: &ScalarField,
    h: &ScalarField,
    profile: &BackgroundProfile,
) -> ScalarField {
    let grid = &p.grid;
    let (nf, nh) = (grid.nrho, grid.n_h());
    let inv_dr = 1.0 / grid.drho;
    let mut face = Array2::zeros((nf, nh));
    for f in 0..nf {
        let (r0, r1) = (grid.rho_nodes[f], grid.rho_nodes[f + 1]);
        for i in 0..nh {
            let dp = (p.values[(f + 1, i)] - p.values[(f, i)]) * inv_dr;
            let rho_h = 0.5 * (r0 * h.values[(f, i)] + r1 * h.values[(f + 1, i)]);
            let rho_thick = 0.5
                * (r0 * (profile.hbar[f] + h.values[(f, i)])
                    + r1 * (profile.hbar[f + 1] + h.values[(f + 1, i)]));
            face[(f, i)] = (dp - rho_h) / rho_thick;
        }
    }
    let mut out = ScalarField::zeros(grid);
    for j in 0..grid.n_rho() {
        for i in 0..nh {
            out.values[(j, i)] = if j == 0 {
                face[(0, i)]
            } else if j == grid.nrho {
                face[(nf - 1, i)]
            } else {
                0.5 * (face[(j - 1, i)] + face[(j, i)])
            };
        }
    }
    out
}

/// Pressure forces entering the momentum and vertical equations:
/// `(1/rho) grad P + (1 + defect) grad H` and `defect / mu`.
pub fn gradient_force(
    sol: &PressureSolution,
    state: &NonHydroState,
    profile: &BackgroundProfile,
    params: &Params,
) -> Result<(VectorField, ScalarField)> {
    if params.mu <= 0.0 {
        return Err(Error::InvalidOperation(
            "the vertical pressure force requires mu > 0".into(),
        ));
    }
    let grid = state.grid();
    let defect = balance_defect(&sol.p, &state.h, profile);
    let height = isopycnal_height(&state.h);
    let force_u = VectorField {
        components: (0..grid.d)
            .map(|c| {
                let gp = ddx(&sol.p, c);
                let gh = ddx(&height, c);
                let mut out = dealias(&defect.mul(&gh));
                for j in 0..grid.n_rho() {
                    let inv_rho = 1.0 / grid.rho_nodes[j];
                    for i in 0..grid.n_h() {
                        out.values[(j, i)] += inv_rho * gp.values[(j, i)] + gh.values[(j, i)];
                    }
                }
                out
            })
            .collect(),
    };
    let force_w = defect.scale(1.0 / params.mu);
    Ok((force_u, force_w))
}
