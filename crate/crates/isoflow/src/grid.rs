//! Discrete domain: a periodic horizontal torus (1 or 2 dimensions) times a
//! bounded density interval `(rho0, rho1)`.
//!
//! Horizontal calculus is spectral (Fourier series, exact on resolved
//! trigonometric polynomials); vertical calculus is second-order finite
//! differences on a uniform density grid with trapezoid quadrature.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Discrete representation of the domain `T^d x (rho0, rho1)`.
///
/// Horizontal nodes are laid out flat with `x` varying fastest
/// (`index = iy * nx + ix`); density nodes are `rho_j = rho0 + j * drho`
/// for `j = 0..=nrho`.
pub struct Grid {
    pub d: usize,
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub nrho: usize,
    pub rho_nodes: Vec<f64>,
    pub drho: f64,
    pub dealias_fraction: f64,

    /// Physical wavenumber along x per flat horizontal index.
    kx: Vec<f64>,
    /// Physical wavenumber along y per flat horizontal index (zero when d = 1).
    ky: Vec<f64>,
    /// |xi|^2 per flat horizontal index.
    k2: Vec<f64>,
    /// True where the 2/3-rule keeps the mode.
    keep: Vec<bool>,

    fft_x: Arc<dyn Fft<f64>>,
    ifft_x: Arc<dyn Fft<f64>>,
    fft_y: Option<Arc<dyn Fft<f64>>>,
    ifft_y: Option<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid")
            .field("d", &self.d)
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .field("lx", &self.lx)
            .field("ly", &self.ly)
            .field("nrho", &self.nrho)
            .field("drho", &self.drho)
            .field("dealias_fraction", &self.dealias_fraction)
            .finish()
    }
}

fn wavenumber(i: usize, n: usize, l: f64) -> f64 {
    let k = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
    k * std::f64::consts::TAU / l
}

impl Grid {
    pub fn new_1d(nx: usize, lx: f64, nrho: usize, rho0: f64, rho1: f64) -> Result<Arc<Grid>> {
        Self::new(1, nx, 1, lx, 1.0, nrho, rho0, rho1, 2.0 / 3.0)
    }

    pub fn new_2d(
        nx: usize,
        ny: usize,
        lx: f64,
        ly: f64,
        nrho: usize,
        rho0: f64,
        rho1: f64,
    ) -> Result<Arc<Grid>> {
        Self::new(2, nx, ny, lx, ly, nrho, rho0, rho1, 2.0 / 3.0)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        d: usize,
        nx: usize,
        ny: usize,
        lx: f64,
        ly: f64,
        nrho: usize,
        rho0: f64,
        rho1: f64,
        dealias_fraction: f64,
    ) -> Result<Arc<Grid>> {
        if d != 1 && d != 2 {
            return Err(Error::Validation {
                key: "domain.d".into(),
                message: "spatial dimension must be 1 or 2".into(),
            });
        }
        if nx < 4 || nx % 2 != 0 {
            return Err(Error::Validation {
                key: "domain.nx".into(),
                message: format!("nx = {nx} must be even and at least 4"),
            });
        }
        if d == 2 && (ny < 4 || ny % 2 != 0) {
            return Err(Error::Validation {
                key: "domain.ny".into(),
                message: format!("ny = {ny} must be even and at least 4"),
            });
        }
        if !(lx > 0.0) || (d == 2 && !(ly > 0.0)) {
            return Err(Error::Validation {
                key: "domain.lx".into(),
                message: "horizontal periods must be positive".into(),
            });
        }
        if nrho < 4 {
            return Err(Error::Validation {
                key: "domain.nrho".into(),
                message: format!("nrho = {nrho} must be at least 4"),
            });
        }
        if !(rho0 > 0.0 && rho1 > rho0) {
            return Err(Error::Validation {
                key: "params.rho1".into(),
                message: format!("need 0 < rho0 < rho1, got rho0 = {rho0}, rho1 = {rho1}"),
            });
        }
        if !(dealias_fraction > 0.0 && dealias_fraction <= 1.0) {
            return Err(Error::Validation {
                key: "domain.dealias_fraction".into(),
                message: "dealias fraction must lie in (0, 1]".into(),
            });
        }

        let ny = if d == 1 { 1 } else { ny };
        let ly = if d == 1 { 1.0 } else { ly };
        let nh = nx * ny;
        let drho = (rho1 - rho0) / nrho as f64;
        let rho_nodes: Vec<f64> = (0..=nrho).map(|j| rho0 + j as f64 * drho).collect();

        let cut_x = (dealias_fraction * (nx / 2) as f64).floor() as i64;
        let cut_y = (dealias_fraction * (ny / 2) as f64).floor() as i64;

        let mut kx = vec![0.0; nh];
        let mut ky = vec![0.0; nh];
        let mut k2 = vec![0.0; nh];
        let mut keep = vec![true; nh];
        for iy in 0..ny {
            for ix in 0..nx {
                let idx = iy * nx + ix;
                kx[idx] = wavenumber(ix, nx, lx);
                if d == 2 {
                    ky[idx] = wavenumber(iy, ny, ly);
                }
                k2[idx] = kx[idx] * kx[idx] + ky[idx] * ky[idx];
                let mx = if ix <= nx / 2 { ix as i64 } else { ix as i64 - nx as i64 };
                let my = if iy <= ny / 2 { iy as i64 } else { iy as i64 - ny as i64 };
                keep[idx] = mx.abs() <= cut_x && (d == 1 || my.abs() <= cut_y);
            }
        }

        let mut planner = FftPlanner::new();
        let fft_x = planner.plan_fft_forward(nx);
        let ifft_x = planner.plan_fft_inverse(nx);
        let (fft_y, ifft_y) = if d == 2 {
            (
                Some(planner.plan_fft_forward(ny)),
                Some(planner.plan_fft_inverse(ny)),
            )
        } else {
            (None, None)
        };

        Ok(Arc::new(Grid {
            d,
            nx,
            ny,
            lx,
            ly,
            nrho,
            rho_nodes,
            drho,
            dealias_fraction,
            kx,
            ky,
            k2,
            keep,
            fft_x,
            ifft_x,
            fft_y,
            ifft_y,
        }))
    }

    /// Number of horizontal nodes.
    pub fn n_h(&self) -> usize {
        self.nx * self.ny
    }

    /// Number of density nodes (`nrho + 1`).
    pub fn n_rho(&self) -> usize {
        self.nrho + 1
    }

    pub fn rho0(&self) -> f64 {
        self.rho_nodes[0]
    }

    pub fn rho1(&self) -> f64 {
        self.rho_nodes[self.nrho]
    }

    /// Uniform horizontal cell area.
    pub fn dx_area(&self) -> f64 {
        let dx = self.lx / self.nx as f64;
        if self.d == 2 {
            dx * self.ly / self.ny as f64
        } else {
            dx
        }
    }

    /// Trapezoid quadrature weight of density node `j`.
    pub fn rho_weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.nrho {
            0.5 * self.drho
        } else {
            self.drho
        }
    }

    /// Largest Nyquist wavenumber magnitude, used in CFL estimates.
    pub fn k_max(&self) -> f64 {
        let kx = std::f64::consts::TAU / self.lx * (self.nx / 2) as f64;
        if self.d == 2 {
            let ky = std::f64::consts::TAU / self.ly * (self.ny / 2) as f64;
            kx.max(ky)
        } else {
            kx
        }
    }

    /// Horizontal coordinate of flat node `i` along axis 0 (x) or 1 (y).
    pub fn coord(&self, i: usize, axis: usize) -> f64 {
        match axis {
            0 => (i % self.nx) as f64 * self.lx / self.nx as f64,
            1 => (i / self.nx) as f64 * self.ly / self.ny as f64,
            _ => panic!("axis out of range"),
        }
    }

    pub(crate) fn kx(&self) -> &[f64] {
        &self.kx
    }

    pub(crate) fn ky(&self) -> &[f64] {
        &self.ky
    }

    pub(crate) fn k2(&self) -> &[f64] {
        &self.k2
    }

    pub(crate) fn keep_mask(&self) -> &[bool] {
        &self.keep
    }

    /// Forward FFT of one horizontal slice (flat layout), normalized so that
    /// coefficients are Fourier-series amplitudes.
    pub(crate) fn fft_forward(&self, slice: &mut [Complex64]) {
        debug_assert_eq!(slice.len(), self.n_h());
        for row in slice.chunks_exact_mut(self.nx) {
            self.fft_x.process(row);
        }
        if let Some(fft_y) = &self.fft_y {
            let mut col = vec![Complex64::default(); self.ny];
            for ix in 0..self.nx {
                for iy in 0..self.ny {
                    col[iy] = slice[iy * self.nx + ix];
                }
                fft_y.process(&mut col);
                for iy in 0..self.ny {
                    slice[iy * self.nx + ix] = col[iy];
                }
            }
        }
        let scale = 1.0 / self.n_h() as f64;
        for v in slice.iter_mut() {
            *v *= scale;
        }
    }

    /// Inverse FFT of one horizontal slice (unnormalized synthesis).
    pub(crate) fn fft_inverse(&self, slice: &mut [Complex64]) {
        debug_assert_eq!(slice.len(), self.n_h());
        for row in slice.chunks_exact_mut(self.nx) {
            self.ifft_x.process(row);
        }
        if let Some(ifft_y) = &self.ifft_y {
            let mut col = vec![Complex64::default(); self.ny];
            for ix in 0..self.nx {
                for iy in 0..self.ny {
                    col[iy] = slice[iy * self.nx + ix];
                }
                ifft_y.process(&mut col);
                for iy in 0..self.ny {
                    slice[iy * self.nx + ix] = col[iy];
                }
            }
        }
    }

    /// Second-order derivative of a profile sampled on the density nodes:
    /// centered in the interior, one-sided at the endpoints.
    pub fn ddrho_profile(&self, f: &[f64]) -> Vec<f64> {
        let n = self.n_rho();
        assert_eq!(f.len(), n);
        let h = self.drho;
        let mut out = vec![0.0; n];
        out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
        for j in 1..n - 1 {
            out[j] = (f[j + 1] - f[j - 1]) / (2.0 * h);
        }
        out[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
        out
    }

    /// Trapezoid integral of a profile from `rho0` to each node; exact 0 at `rho0`.
    pub fn integrate_profile_lower(&self, f: &[f64]) -> Vec<f64> {
        let n = self.n_rho();
        assert_eq!(f.len(), n);
        let mut out = vec![0.0; n];
        for j in 1..n {
            out[j] = out[j - 1] + 0.5 * self.drho * (f[j - 1] + f[j]);
        }
        out
    }
}

pub(crate) fn grids_match(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b)
        || (a.d == b.d
            && a.nx == b.nx
            && a.ny == b.ny
            && a.lx == b.lx
            && a.ly == b.ly
            && a.nrho == b.nrho
            && a.rho_nodes[0] == b.rho_nodes[0]
            && a.rho_nodes[a.nrho] == b.rho_nodes[b.nrho])
}
