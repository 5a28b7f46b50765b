//! Sampled fields on the discrete domain and the operator toolbox acting on
//! them: spectral transforms, horizontal derivatives and multipliers, vertical
//! differences and quadratures, dealiasing and the exact heat propagator.
//!
//! Fields are immutable values; every operator returns a fresh field. Storage
//! is `(n_rho, n_h)`: each row is one contiguous horizontal slice.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{grids_match, Grid};

/// Real scalar field sampled on every grid node.
#[derive(Clone)]
pub struct ScalarField {
    pub grid: Arc<Grid>,
    pub values: Array2<f64>,
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "ScalarField({}x{}, max |v| = {:.3e})",
            self.values.nrows(),
            self.values.ncols(),
            self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
        )
    }
}

/// Horizontal vector field: `d` scalar components on one grid.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub components: Vec<ScalarField>,
}

/// Complex Fourier coefficients per horizontal wavenumber and density node.
#[derive(Clone)]
pub struct SpectralField {
    pub grid: Arc<Grid>,
    pub coeffs: Array2<Complex64>,
}

impl ScalarField {
    pub fn zeros(grid: &Arc<Grid>) -> ScalarField {
        ScalarField {
            grid: grid.clone(),
            values: Array2::zeros((grid.n_rho(), grid.n_h())),
        }
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> ScalarField {
        ScalarField {
            grid: grid.clone(),
            values: Array2::from_elem((grid.n_rho(), grid.n_h()), c),
        }
    }

    /// Sample `f(x, y, rho)` at every node.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(f64, f64, f64) -> f64) -> ScalarField {
        let mut values = Array2::zeros((grid.n_rho(), grid.n_h()));
        for j in 0..grid.n_rho() {
            let rho = grid.rho_nodes[j];
            for i in 0..grid.n_h() {
                let x = grid.coord(i, 0);
                let y = if grid.d == 2 { grid.coord(i, 1) } else { 0.0 };
                values[(j, i)] = f(x, y, rho);
            }
        }
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    /// Build a field from a density profile (no horizontal variation).
    pub fn from_profile(grid: &Arc<Grid>, profile: &[f64]) -> ScalarField {
        assert_eq!(profile.len(), grid.n_rho());
        let mut values = Array2::zeros((grid.n_rho(), grid.n_h()));
        for (j, &p) in profile.iter().enumerate() {
            values.row_mut(j).fill(p);
        }
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        grids_match(&self.grid, &other.grid)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Discrete L2 norm with trapezoid density weights and uniform
    /// horizontal weights.
    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    pub fn l2_norm_sq(&self) -> f64 {
        let g = &self.grid;
        let da = g.dx_area();
        let mut total = 0.0;
        for j in 0..g.n_rho() {
            let w = g.rho_weight(j) * da;
            let mut row_sum = 0.0;
            for &v in self.values.row(j) {
                row_sum += v * v;
            }
            total += w * row_sum;
        }
        total
    }

    /// `integral over the full domain` with the shared quadrature weights.
    pub fn integral(&self) -> f64 {
        let g = &self.grid;
        let da = g.dx_area();
        let mut total = 0.0;
        for j in 0..g.n_rho() {
            let w = g.rho_weight(j) * da;
            let mut row_sum = 0.0;
            for &v in self.values.row(j) {
                row_sum += v;
            }
            total += w * row_sum;
        }
        total
    }

    /// Weighted inner product matching `l2_norm`.
    pub fn inner(&self, other: &ScalarField) -> f64 {
        assert!(self.same_grid(other));
        let g = &self.grid;
        let da = g.dx_area();
        let mut total = 0.0;
        for j in 0..g.n_rho() {
            let w = g.rho_weight(j) * da;
            let a = self.values.row(j);
            let b = other.values.row(j);
            let mut row = 0.0;
            for i in 0..g.n_h() {
                row += a[i] * b[i];
            }
            total += w * row;
        }
        total
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.map(|&v| f(v)),
        }
    }

    pub fn scale(&self, c: f64) -> ScalarField {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &ScalarField) -> ScalarField {
        assert!(self.same_grid(other));
        ScalarField {
            grid: self.grid.clone(),
            values: &self.values + &other.values,
        }
    }

    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        assert!(self.same_grid(other));
        ScalarField {
            grid: self.grid.clone(),
            values: &self.values - &other.values,
        }
    }

    /// Pointwise product (no dealiasing).
    pub fn mul(&self, other: &ScalarField) -> ScalarField {
        assert!(self.same_grid(other));
        ScalarField {
            grid: self.grid.clone(),
            values: &self.values * &other.values,
        }
    }

    /// Pointwise product followed by the 2/3-rule projection.
    pub fn mul_dealiased(&self, other: &ScalarField) -> ScalarField {
        dealias(&self.mul(other))
    }

    /// Add `c * other` in place (used by time steppers).
    pub fn axpy(&mut self, c: f64, other: &ScalarField) {
        assert!(self.same_grid(other));
        self.values.zip_mut_with(&other.values, |a, &b| *a += c * b);
    }

    /// One density slice as a flat horizontal array.
    pub fn slice_rho(&self, j: usize) -> Vec<f64> {
        self.values.row(j).to_vec()
    }
}

impl VectorField {
    pub fn zeros(grid: &Arc<Grid>) -> VectorField {
        VectorField {
            components: (0..grid.d).map(|_| ScalarField::zeros(grid)).collect(),
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.components[0].grid
    }

    pub fn d(&self) -> usize {
        self.components.len()
    }

    pub fn map(&self, f: impl Fn(&ScalarField) -> ScalarField) -> VectorField {
        VectorField {
            components: self.components.iter().map(f).collect(),
        }
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        VectorField {
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.add(b))
                .collect(),
        }
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        VectorField {
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.sub(b))
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> VectorField {
        self.map(|f| f.scale(c))
    }

    pub fn axpy(&mut self, c: f64, other: &VectorField) {
        for (a, b) in self.components.iter_mut().zip(&other.components) {
            a.axpy(c, b);
        }
    }

    /// Pointwise dot product of two vector fields.
    pub fn dot(&self, other: &VectorField) -> ScalarField {
        let mut out = self.components[0].mul(&other.components[0]);
        for i in 1..self.components.len() {
            out = out.add(&self.components[i].mul(&other.components[i]));
        }
        out
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.components.iter().map(|c| c.l2_norm_sq()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.components
            .iter()
            .fold(0.0f64, |a, c| a.max(c.max_abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(|c| c.is_finite())
    }
}

impl SpectralField {
    pub fn zeros(grid: &Arc<Grid>) -> SpectralField {
        SpectralField {
            grid: grid.clone(),
            coeffs: Array2::default((grid.n_rho(), grid.n_h())),
        }
    }
}

/// Forward transform. Errors on non-finite input.
pub fn to_spectral(f: &ScalarField) -> Result<SpectralField> {
    if !f.is_finite() {
        return Err(Error::NonFinite("to_spectral input".into()));
    }
    Ok(to_spectral_unchecked(f))
}

pub(crate) fn to_spectral_unchecked(f: &ScalarField) -> SpectralField {
    let g = &f.grid;
    let mut out = SpectralField::zeros(g);
    let mut buf = vec![Complex64::default(); g.n_h()];
    for j in 0..g.n_rho() {
        for (b, &v) in buf.iter_mut().zip(f.values.row(j)) {
            *b = Complex64::new(v, 0.0);
        }
        g.fft_forward(&mut buf);
        for (o, &b) in out.coeffs.row_mut(j).iter_mut().zip(buf.iter()) {
            *o = b;
        }
    }
    out
}

/// Inverse transform back to a real field (imaginary round-off discarded).
pub fn to_physical(f: &SpectralField) -> ScalarField {
    let g = &f.grid;
    let mut out = ScalarField::zeros(g);
    let mut buf = vec![Complex64::default(); g.n_h()];
    for j in 0..g.n_rho() {
        buf.copy_from_slice(f.coeffs.row(j).as_slice().unwrap());
        g.fft_inverse(&mut buf);
        for (o, b) in out.values.row_mut(j).iter_mut().zip(buf.iter()) {
            *o = b.re;
        }
    }
    out
}

/// Apply a complex multiplier per horizontal wavenumber, in physical space.
fn apply_multiplier(f: &ScalarField, m: impl Fn(usize) -> Complex64) -> ScalarField {
    let mut spec = to_spectral_unchecked(f);
    let g = &f.grid;
    for j in 0..g.n_rho() {
        for (i, c) in spec.coeffs.row_mut(j).iter_mut().enumerate() {
            *c *= m(i);
        }
    }
    to_physical(&spec)
}

/// Spectral horizontal derivative along `axis` (0 = x, 1 = y).
///
/// Exact on resolved trigonometric polynomials; the Nyquist mode of the
/// differentiated axis is zeroed to keep the operator skew-adjoint.
pub fn ddx(f: &ScalarField, axis: usize) -> ScalarField {
    let g = &f.grid;
    assert!(axis < g.d, "axis {axis} out of range for d = {}", g.d);
    let k = if axis == 0 { g.kx() } else { g.ky() };
    let (n_axis, l_axis) = if axis == 0 { (g.nx, g.lx) } else { (g.ny, g.ly) };
    let nyquist = std::f64::consts::TAU / l_axis * (n_axis / 2) as f64;
    apply_multiplier(f, |i| {
        if k[i].abs() >= nyquist {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, k[i])
        }
    })
}

/// Horizontal gradient (d components).
pub fn grad(f: &ScalarField) -> VectorField {
    VectorField {
        components: (0..f.grid.d).map(|a| ddx(f, a)).collect(),
    }
}

/// Horizontal divergence of a vector field.
pub fn div(v: &VectorField) -> ScalarField {
    let mut out = ddx(&v.components[0], 0);
    for a in 1..v.components.len() {
        out = out.add(&ddx(&v.components[a], a));
    }
    out
}

/// Horizontal Laplacian (spectral multiplier `-|xi|^2`).
pub fn laplacian(f: &ScalarField) -> ScalarField {
    let k2 = f.grid.k2().to_vec();
    apply_multiplier(f, |i| Complex64::new(-k2[i], 0.0))
}

/// Fractional Sobolev multiplier `(1 + |xi|^2)^(s/2)` per density node.
pub fn lambda_s(f: &ScalarField, s: f64) -> ScalarField {
    if s == 0.0 {
        return f.clone();
    }
    let k2 = f.grid.k2().to_vec();
    apply_multiplier(f, |i| Complex64::new((1.0 + k2[i]).powf(s / 2.0), 0.0))
}

/// Exact heat propagator: multiplies mode `xi` by `exp(-alpha dt |xi|^2)`.
/// The horizontal mean is untouched.
pub fn heat_propagate(f: &ScalarField, alpha: f64, dt: f64) -> ScalarField {
    assert!(alpha >= 0.0 && dt >= 0.0);
    if alpha == 0.0 || dt == 0.0 {
        return f.clone();
    }
    let k2 = f.grid.k2().to_vec();
    apply_multiplier(f, |i| Complex64::new((-alpha * dt * k2[i]).exp(), 0.0))
}

/// Zero all coefficients above the retained fraction of the Nyquist
/// wavenumber (2/3 rule by default). Stabilizes quadratic nonlinearities.
pub fn dealias(f: &ScalarField) -> ScalarField {
    let keep = f.grid.keep_mask().to_vec();
    apply_multiplier(f, |i| {
        if keep[i] {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// Second-order vertical derivative: centered in the interior, one-sided at
/// the density endpoints. Exact on fields quadratic in `rho`.
pub fn ddrho(f: &ScalarField) -> ScalarField {
    let g = &f.grid;
    let n = g.n_rho();
    let h = g.drho;
    let mut out = ScalarField::zeros(g);
    for i in 0..g.n_h() {
        out.values[(0, i)] =
            (-3.0 * f.values[(0, i)] + 4.0 * f.values[(1, i)] - f.values[(2, i)]) / (2.0 * h);
        out.values[(n - 1, i)] = (3.0 * f.values[(n - 1, i)] - 4.0 * f.values[(n - 2, i)]
            + f.values[(n - 3, i)])
            / (2.0 * h);
    }
    for j in 1..n - 1 {
        for i in 0..g.n_h() {
            out.values[(j, i)] = (f.values[(j + 1, i)] - f.values[(j - 1, i)]) / (2.0 * h);
        }
    }
    out
}

/// Composite trapezoid integral from each node up to `rho1`:
/// `rho -> int_rho^rho1 f`. Exactly zero at `rho1`.
pub fn integrate_rho_upper(f: &ScalarField) -> ScalarField {
    let g = &f.grid;
    let n = g.n_rho();
    let mut out = ScalarField::zeros(g);
    for j in (0..n - 1).rev() {
        for i in 0..g.n_h() {
            out.values[(j, i)] = out.values[(j + 1, i)]
                + 0.5 * g.drho * (f.values[(j, i)] + f.values[(j + 1, i)]);
        }
    }
    out
}

/// Composite trapezoid integral from `rho0` up to each node:
/// `rho -> int_rho0^rho f`. Exactly zero at `rho0`.
pub fn integrate_rho_lower(f: &ScalarField) -> ScalarField {
    let g = &f.grid;
    let n = g.n_rho();
    let mut out = ScalarField::zeros(g);
    for j in 1..n {
        for i in 0..g.n_h() {
            out.values[(j, i)] = out.values[(j - 1, i)]
                + 0.5 * g.drho * (f.values[(j - 1, i)] + f.values[(j, i)]);
        }
    }
    out
}

/// Discrete adjoint of [`integrate_rho_upper`] under the trapezoid inner
/// product: `(int_upper f, g)_w = (f, int_lower_adjoint g)_w` holds to
/// round-off. A second-order discretization of `int_rho0^rho` that differs
/// from [`integrate_rho_lower`] only at the two boundary nodes; it is the
/// variant that makes quadratic forms built on the pair exactly symmetric.
pub fn integrate_rho_lower_adjoint(f: &ScalarField) -> ScalarField {
    let g = &f.grid;
    let n = g.n_rho();
    let mut out = integrate_rho_lower(f);
    for i in 0..g.n_h() {
        out.values[(0, i)] += 0.5 * g.drho * f.values[(0, i)];
        out.values[(n - 1, i)] -= 0.5 * g.drho * f.values[(n - 1, i)];
    }
    out
}

/// H^s norm of a single density slice (1D horizontal Sobolev norm).
pub fn trace_hs_norm(f: &ScalarField, j: usize, s: f64) -> f64 {
    let g = &f.grid;
    let spec = to_spectral_unchecked(f);
    let da = g.dx_area();
    let mut sum = 0.0;
    for (i, c) in spec.coeffs.row(j).iter().enumerate() {
        let m = (1.0 + g.k2()[i]).powf(s);
        sum += m * c.norm_sqr();
    }
    // Parseval with series coefficients: |T|^2 * sum |c_k|^2 / |T| = |T| sum.
    (sum * da * g.n_h() as f64).sqrt()
}
